#include "tinydetr/labels.hpp"

#include "tinydetr/errors.hpp"

namespace tinydetr {

std::string class_name(std::size_t id) {
    if (id >= kNumClasses) {
        throw DataError("unknown class id " + std::to_string(id) + "; valid ids are 0.." +
                        std::to_string(kNumClasses - 1));
    }
    return kClassNames[id];
}

std::size_t class_id(const std::string& name) {
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (name == kClassNames[i]) {
            return i;
        }
    }
    std::string valid;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (i) {
            valid += ", ";
        }
        valid += kClassNames[i];
    }
    throw DataError("unknown class name '" + name + "'; valid names: " + valid);
}

bool valid_class_id(long long id) { return id >= 0 && id < static_cast<long long>(kNumClasses); }

}  // namespace tinydetr

#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "tinydetr/box.hpp"

namespace tinydetr {

// The four-class dashcam label space. Class ids are dense and stable; the
// model's extra class index kNumClasses is the no-object slot.
inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "traffic_signal", "stop_sign", "car", "truck"};

std::string class_name(std::size_t id);
// Throws DataError for unknown names.
std::size_t class_id(const std::string& name);
bool valid_class_id(long long id);

struct GroundTruthObject {
    BoxValues box;  // normalized center form (cx, cy, w, h)
    std::size_t class_id = 0;
};

}  // namespace tinydetr

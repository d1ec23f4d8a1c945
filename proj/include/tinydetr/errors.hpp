#pragma once

#include <stdexcept>
#include <string>

namespace tinydetr {

// Malformed or inconsistent input data (annotation files, config files,
// checkpoints, recipes). CLI maps this to exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure at runtime (NaN loss, non-finite cost entries, failed
// gradient check). CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tinydetr

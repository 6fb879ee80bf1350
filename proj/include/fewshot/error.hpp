#pragma once

#include <stdexcept>

namespace fewshot {

// Bad inputs: malformed files, mismatched shapes, impossible requests.
// The CLI maps these to exit code 2.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered during numeric work. Never swallowed: a non-finite
// value anywhere in training is a bug, not a condition to recover from.
// The CLI maps these to exit code 3.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace fewshot

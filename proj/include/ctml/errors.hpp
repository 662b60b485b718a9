#pragma once

#include <stdexcept>
#include <string>

namespace ctml {

// Error categories map 1:1 onto CLI exit codes (see tools/ctml_main.cpp):
// config_error -> 2, numeric_error -> 3, io_error -> 4.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : error {
    using error::error;
};

// Shape/geometry mismatches are configuration problems.
struct dimension_error : config_error {
    using config_error::config_error;
};

struct numeric_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

} // namespace ctml

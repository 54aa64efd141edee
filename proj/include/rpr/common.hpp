#pragma once

#include <stdexcept>
#include <string>

namespace rpr {

// Error taxonomy, mapped to CLI exit codes in tools/rprdepth.cpp:
//   config/validation -> 1, io/format -> 2, numeric -> 3
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct validation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rpr

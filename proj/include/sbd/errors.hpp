#pragma once

#include <stdexcept>
#include <string>

namespace sbd {

/// Bad user input: malformed files, invalid configuration, degenerate data.
/// The CLI maps this to exit code 2; everything else is a runtime failure (1).
struct invalid_input : std::runtime_error {
    explicit invalid_input(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace sbd

#pragma once

#include <stdexcept>
#include <string>

namespace msgode {

// Bad user input: malformed configs, invalid CLI usage. Exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corrupt or incompatible on-disk artifacts. Exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or contract violations inside numeric kernels. Exit code 2.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace msgode

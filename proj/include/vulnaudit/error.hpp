#pragma once

#include <stdexcept>
#include <string>

namespace vulnaudit {

// Bad input data, bad configuration, or a violated precondition on user data.
// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf produced during computation. The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace vulnaudit

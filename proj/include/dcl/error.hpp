#pragma once

#include <stdexcept>
#include <string>

namespace dcl {

/// Bad user input: malformed files, invalid flags, violated preconditions on
/// data the caller supplied. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical or internal failure (non-finite loss, corrupted state).
class ComputeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dcl

#pragma once

#include <stdexcept>
#include <string>

namespace depthforge {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem-level failures: missing file, unwritable path, short write.
struct IoError : Error {
    using Error::Error;
};

// A file exists but its contents do not parse: bad magic, truncated
// payload, out-of-range header fields.
struct FormatError : Error {
    using Error::Error;
};

// An in-memory object violates its invariants or an argument violates a
// precondition: dimension mismatch, non-finite values, bad index.
struct ValidationError : Error {
    using Error::Error;
};

} // namespace depthforge

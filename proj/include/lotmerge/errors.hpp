#pragma once

#include <stdexcept>
#include <string>

namespace lotmerge {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension mismatch in a linear-algebra operation or unit evaluation.
struct ShapeError : Error {
    using Error::Error;
};

/// Two artifacts (checkpoint / task vector / stats) built against different specs.
struct SpecMismatchError : Error {
    using Error::Error;
};

/// Invalid argument (empty list, out-of-range tolerance, ...).
struct ArgumentError : Error {
    using Error::Error;
};

/// Numerical failure: SVD non-convergence, diverging training run, ...
struct NumericalError : Error {
    using Error::Error;
};

/// On-disk artifact failed validation. `code` tells the callers apart.
struct FormatError : Error {
    enum class Code {
        MalformedManifest,
        ShapeMismatch,
        TruncatedBlob,
        HashMismatch,
        BadValue,
        MissingFile,
    };

    FormatError(Code c, const std::string& msg) : Error(msg), code(c) {}

    Code code;
};

}  // namespace lotmerge

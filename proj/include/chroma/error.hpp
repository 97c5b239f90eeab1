// Exception hierarchy shared across the library. The CLI maps these to
// process exit codes: UsageError -> 2, DataError/ShapeError -> 3,
// NumericError -> 4.
#pragma once

#include <stdexcept>
#include <string>

namespace chroma {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad flag combinations, out-of-range arguments.
class UsageError : public Error {
public:
    using Error::Error;
};

// Unreadable or inconsistent inputs: files, checkpoints, empty corpora.
class DataError : public Error {
public:
    using Error::Error;
};

// Tensor geometry mismatches.
class ShapeError : public DataError {
public:
    using DataError::DataError;
};

// Non-finite values, failed convergence, rank deficiency.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace chroma

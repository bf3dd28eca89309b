#pragma once

#include <stdexcept>
#include <string>

namespace flashread {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An argument fell outside the mathematical domain of an operation.
struct DomainError : Error {
    using Error::Error;
};

// A caller-side contract violation (unsorted thresholds, bad sizes, ...).
struct PreconditionError : Error {
    using Error::Error;
};

// Operation requires a model shape it did not get (e.g. SLC-only ops).
struct UnsupportedModelError : Error {
    using Error::Error;
};

// Two reads carry no joint information (zero denominator in an estimator).
struct DegenerateReadsError : Error {
    using Error::Error;
};

// A derived quantity left the invertible range of the estimator equations.
struct OutOfRangeError : Error {
    using Error::Error;
};

// Reads were individually valid but jointly contradictory.
struct InconsistentReadsError : Error {
    using Error::Error;
};

// Estimated transition probabilities are zero where the exact ones are not.
struct SupportMismatchError : Error {
    using Error::Error;
};

// A read interval has zero probability under both channel inputs.
struct EmptyIntervalError : Error {
    using Error::Error;
};

// Invalid experiment / solver configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or truncated data file.
struct FileFormatError : Error {
    using Error::Error;
};

}  // namespace flashread

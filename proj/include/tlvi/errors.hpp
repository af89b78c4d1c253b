#pragma once

#include <stdexcept>
#include <string>

namespace tlvi {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad parameters or unsupported option combinations (CLI exit code 1).
struct ConfigError : Error {
    using Error::Error;
};

// Ingestion problems: malformed files, missing columns, fold-size violations.
struct DataError : Error {
    using Error::Error;
};

// Numerical failures: singular systems, invalid finite-difference steps.
struct NumericError : Error {
    using Error::Error;
};

} // namespace tlvi

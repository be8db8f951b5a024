#pragma once

#include <stdexcept>
#include <string>

namespace owdet {

// Base for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration (bad dimensions, exhausted class budget, ...).
// CLI maps this to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed external data: COCO files, pool containers, checkpoints.
// CLI maps this to exit code 3.
struct DataError : Error {
    using Error::Error;
};

// Numerical failure: non-finite loss, divergence, pretraining floor unreached.
// CLI maps this to exit code 4.
struct NumericError : Error {
    using Error::Error;
};

// Shape conformance violation in a tensor op.
struct ShapeError : Error {
    using Error::Error;
};

// Broken precondition inside the library (caller bug, not user input).
struct ContractError : Error {
    using Error::Error;
};

// Caller handed in something invalid: empty/duplicate class names,
// unknown token, out-of-order memorize step, mode/pool mismatch.
struct InputError : Error {
    using Error::Error;
};

}  // namespace owdet

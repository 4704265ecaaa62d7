#pragma once

#include <stdexcept>
#include <string>

namespace tvlm {

// Error taxonomy maps 1:1 onto CLI exit codes:
//   ConfigError -> 2, NumericError -> 3, IncompatError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: malformed config/manifest, missing file, schema violation,
// degenerate image, empty supervision, sequence overflow.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite value produced by an op, or a numeric abort during training.
struct NumericError : Error {
    using Error::Error;
};

// Structural mismatch: tensor shapes, checkpoint names/shapes/config hashes,
// soup member incompatibility, corrupt checkpoint files.
struct IncompatError : Error {
    using Error::Error;
};

}  // namespace tvlm

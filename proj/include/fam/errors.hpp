#pragma once

#include <stdexcept>
#include <string>

namespace fam {

// Error taxonomy shared by all modules. Everything derives from Error so
// callers can catch the whole family at the CLI boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/parameter shapes disagree.
struct ShapeError : Error {
    using Error::Error;
};

// An API precondition was violated by the caller.
struct ContractViolation : Error {
    using Error::Error;
};

// Bad user-supplied value (labels out of range, empty batch, ...).
struct InputError : Error {
    using Error::Error;
};

// Non-finite values encountered where finite math is required.
struct NumericError : Error {
    using Error::Error;
};

// Invalid run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Server/client protocol invariant broken (mixed rounds, bad flag, ...).
struct ProtocolError : Error {
    using Error::Error;
};

// Episode sampling could not be satisfied.
struct EpisodeError : Error {
    using Error::Error;
};

// Dataset ingestion failure (unreadable file, empty class, bad magic).
struct IngestionError : Error {
    using Error::Error;
};

// Filesystem-level failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace fam

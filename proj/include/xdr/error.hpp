#pragma once

#include <stdexcept>
#include <string>

namespace xdr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes that do not agree for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Checkpoint or index bytes that fail checksum verification.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// Malformed input files (corpora, qrels, runs, configs).
class ParseError : public Error {
public:
    using Error::Error;
};

}  // namespace xdr

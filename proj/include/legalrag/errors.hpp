#pragma once

#include <stdexcept>
#include <string>

namespace legalrag {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be read or decoded.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Stored data violates an invariant (span bounds, quote mismatch, row/chunk mismatch).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Structured text (JSON, judge output) could not be parsed.
class ParseError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

/// An artifact was produced under a different backend/configuration than requested.
class ProvenanceError : public Error {
public:
    using Error::Error;
};

class TemplateError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or command-line input, detected before any work starts.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Remote service failure. Retryable errors carry the number of attempts made.
class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts, bool retryable = true)
        : Error(what), attempts_(attempts), retryable_(retryable) {}

    int attempts() const noexcept { return attempts_; }
    bool retryable() const noexcept { return retryable_; }

private:
    int attempts_;
    bool retryable_;
};

}  // namespace legalrag

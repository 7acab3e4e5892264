#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aodip {

/// Base of every error raised by the library. CLI front-ends map these to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class InvalidPrompt : public Error {
public:
    using Error::Error;
};

class InvalidToken : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class StorageError : public Error {
public:
    using Error::Error;
};

class DegenerateFeature : public Error {
public:
    using Error::Error;
};

class CredentialMissing : public Error {
public:
    CredentialMissing() : Error("credential token missing: inference halted") {}
};

class CredentialNotFound : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    explicit TrainingDiverged(int epoch)
        : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class FixtureNotFound : public Error {
public:
    using Error::Error;
};

}  // namespace aodip

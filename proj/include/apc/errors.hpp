#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace apc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input records or malformed model output.
class ParseError : public Error {
public:
    using Error::Error;
};

// Dangling references, duplicate ids, mismatched case sets.
class IntegrityError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Transport failure after retries; status is the last HTTP status (0 for
// connection-level failures).
class BackendError : public Error {
public:
    explicit BackendError(const std::string& msg, int status = 0)
        : Error(msg), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

// Instruction generation produced unparseable output twice.
class GenerationError : public Error {
public:
    using Error::Error;
};

// APC classification requested without an instruction for the case's pair.
class MissingInstructionError : public Error {
public:
    using Error::Error;
};

// No previous-iteration instruction exists for a requested SA.
class MissingSaError : public Error {
public:
    using Error::Error;
};

// APC batch run with an instruction set that does not cover all case pairs.
class CoverageError : public Error {
public:
    CoverageError(const std::string& msg, std::vector<std::pair<std::string, std::string>> missing)
        : Error(msg), missing_(std::move(missing)) {}
    const std::vector<std::pair<std::string, std::string>>& missing_pairs() const { return missing_; }

private:
    std::vector<std::pair<std::string, std::string>> missing_;
};

} // namespace apc

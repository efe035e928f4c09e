#pragma once

#include <stdexcept>
#include <string>

namespace bex {

// Base for every error the library raises. Callers that only need a message
// catch this; the subclasses let the service map failures to status codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IllegalActionError : public Error {
public:
    using Error::Error;
};

class OutOfTurnError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class DatasetError : public Error {
public:
    using Error::Error;
};

// A tree produced a path whose constraints cannot all hold at once.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

class TransportError : public Error {
public:
    using Error::Error;
};

// Raised when the initial explanation cannot be obtained. Carries the
// serialized prompt so it can be inspected or replayed offline.
class SessionError : public Error {
public:
    SessionError(const std::string& what, std::string prompt)
        : Error(what), prompt_(std::move(prompt)) {}

    const std::string& prompt() const noexcept { return prompt_; }

private:
    std::string prompt_;
};

}  // namespace bex

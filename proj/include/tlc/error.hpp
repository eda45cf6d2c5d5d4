#pragma once

#include <stdexcept>
#include <string>

namespace tlc {

// Base error for every rejected input or failed operation.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or missing configuration; carries the offending field name.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Emits a single-line warning on stderr. Quiet when TLC_QUIET is set.
void warn(const std::string& message);

}  // namespace tlc

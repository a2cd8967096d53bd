#pragma once

#include <stdexcept>
#include <string>

namespace tracefind {

/// Raised when user-supplied input (files, flags, records) violates a
/// documented contract. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed JSONL line. Carries the 1-based line number and the field.
class CorpusParseError : public ValidationError {
public:
    CorpusParseError(std::size_t line, std::string field, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ", field '" + field + "': " + what),
          line_(line), field_(std::move(field)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

/// A parsed record breaks a TraceRecord invariant.
class RecordValidationError : public ValidationError {
public:
    RecordValidationError(std::string record_id, const std::string& what)
        : ValidationError("record '" + record_id + "': " + what), record_id_(std::move(record_id)) {}

    const std::string& record_id() const noexcept { return record_id_; }

private:
    std::string record_id_;
};

class EmptyCorpusError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

}  // namespace tracefind

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace theater {

// Root of every error the harness raises. Callers that only need to report
// can catch this; callers that branch on the failure catch the subclass.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- corpus ---------------------------------------------------------------

class DatasetParseError : public Error {
 public:
  DatasetParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, std::string field, const std::string& what)
      : Error("line " + std::to_string(line) + ": field '" + field + "' " + what),
        line_(line),
        field_(std::move(field)) {}
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  EmptyDatasetError() : Error("empty dataset") {}
};

// --- injection ------------------------------------------------------------

class WrongCategoryError : public Error {
 public:
  using Error::Error;
};

class PlacementPolicyError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class GenerationRejectedError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

// --- protocol -------------------------------------------------------------

class AmbiguousJudgmentError : public Error {
 public:
  enum class Reason { NoMatch, BothSlots };

  AmbiguousJudgmentError(Reason reason, const std::string& what)
      : Error(what), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

// --- client ---------------------------------------------------------------

// Retries exhausted, connection refused, timeouts.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Non-retriable HTTP status (or an unusable 2xx body).
class EndpointError : public Error {
 public:
  EndpointError(int status, std::string body_excerpt)
      : Error("endpoint returned HTTP " + std::to_string(status) + ": " + body_excerpt),
        status_(status),
        body_excerpt_(std::move(body_excerpt)) {}
  int status() const { return status_; }
  const std::string& body_excerpt() const { return body_excerpt_; }

 private:
  int status_;
  std::string body_excerpt_;
};

// --- metrics / runner -----------------------------------------------------

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class KeyMismatchError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace theater

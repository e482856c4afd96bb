#pragma once

#include <stdexcept>
#include <string>

namespace tim {

// Error taxonomy shared by the library and the CLI. The CLI maps kinds to
// process exit codes: usage/config -> 2, data-ish kinds -> 3, numeric and
// contract violations -> 4.
enum class ErrorKind {
  usage,
  config,
  data,
  schema,
  parse,
  template_error,
  checkpoint,
  shape,
  contract,
  numeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case ErrorKind::usage:
      case ErrorKind::config:
        return 2;
      case ErrorKind::data:
      case ErrorKind::schema:
      case ErrorKind::parse:
      case ErrorKind::template_error:
      case ErrorKind::checkpoint:
        return 3;
      case ErrorKind::shape:
      case ErrorKind::contract:
      case ErrorKind::numeric:
        return 4;
    }
    return 1;
  }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorKind::usage, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};
struct SchemaError : Error {
  explicit SchemaError(const std::string& m) : Error(ErrorKind::schema, m) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorKind::parse, m) {}
};
struct TemplateError : Error {
  explicit TemplateError(const std::string& m)
      : Error(ErrorKind::template_error, m) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m)
      : Error(ErrorKind::checkpoint, m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m)
      : Error(ErrorKind::contract, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

}  // namespace tim

#ifndef WPCL_ERROR_HPP_
#define WPCL_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace wpcl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or precondition violation detected before any work.
struct ConfigError : Error {
  using Error::Error;
};

// World or episode generation exhausted its retry budget.
struct GenerationError : Error {
  using Error::Error;
};

// Requested cells are not connected in the walkable graph.
struct NoPathError : Error {
  using Error::Error;
};

// Non-finite loss or gradient during optimization.
struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Failure talking to an external VLM endpoint. `observation_index` is -1
// until the history-level caller attaches the failing index.
struct VlmError : Error {
  enum class Kind { Timeout, HttpStatus, MalformedResponse, MissingCredentials, Connection };

  VlmError(Kind k, const std::string& msg, int status = 0)
      : Error(msg), kind(k), http_status(status) {}

  Kind kind;
  int http_status = 0;
  int observation_index = -1;
};

}  // namespace wpcl

#endif  // WPCL_ERROR_HPP_

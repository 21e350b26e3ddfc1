#pragma once

#include <stdexcept>
#include <string>

namespace imc {

/// Base error. `code()` is a short machine-readable tag used by the CLI
/// (`error[E_SHAPE]: ...`).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("E_SHAPE", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("E_CONFIG", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("E_IO", what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("E_DATA", what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error("E_CHECKPOINT", what) {}
};

}  // namespace imc

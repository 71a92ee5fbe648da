#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mixr {

enum class ErrorKind { kInput, kParse, kIo, kConfig, kDiverged };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Bad arguments or shapes passed to an operation.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::kParse, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

// Run configuration failed validation. The message carries the field path.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(std::size_t step)
      : Error(ErrorKind::kDiverged,
              "training diverged: non-finite loss at step " + std::to_string(step)),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace mixr

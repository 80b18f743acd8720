#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace agsynth {

// Each error class maps to a distinct process exit code in the CLI.
enum class ErrorCategory : int {
  kConfig = 2,
  kValidation = 3,
  kIngestion = 4,
  kNumerical = 5,
  kCheckpoint = 6,
  kIo = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorCategory::kValidation, what) {}
};

class IngestionError : public Error {
 public:
  IngestionError(const std::string& path, const std::string& what)
      : Error(ErrorCategory::kIngestion, path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class NumericalError : public Error {
 public:
  NumericalError(std::int64_t step, const std::string& what)
      : Error(ErrorCategory::kNumerical, "step " + std::to_string(step) + ": " + what), step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error(ErrorCategory::kCheckpoint, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

}  // namespace agsynth

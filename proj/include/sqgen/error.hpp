#pragma once

#include <stdexcept>
#include <string>

namespace sqgen {

enum class ErrorKind {
  InvalidCorpus,
  InvalidSize,
  InvalidTokenId,
  InvalidSpans,
  InvalidRatio,
  NumericalError,
  ConfigError,
  InvalidLoss,
  ContextTooLong,
  QuestionTooLong,
  InvalidTarget,
  InvalidDataset,
  TrainingDiverged,
  InvalidInput,
  ContextTooShort,
  ScorerError,
  DegenerateInput,
  InvalidAnnotationSet,
  IoError,
  FormatError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace sqgen

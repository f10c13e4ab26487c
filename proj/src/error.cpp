#include "sqgen/error.hpp"

namespace sqgen {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidCorpus: return "InvalidCorpus";
    case ErrorKind::InvalidSize: return "InvalidSize";
    case ErrorKind::InvalidTokenId: return "InvalidTokenId";
    case ErrorKind::InvalidSpans: return "InvalidSpans";
    case ErrorKind::InvalidRatio: return "InvalidRatio";
    case ErrorKind::NumericalError: return "NumericalError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::InvalidLoss: return "InvalidLoss";
    case ErrorKind::ContextTooLong: return "ContextTooLong";
    case ErrorKind::QuestionTooLong: return "QuestionTooLong";
    case ErrorKind::InvalidTarget: return "InvalidTarget";
    case ErrorKind::InvalidDataset: return "InvalidDataset";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::ContextTooShort: return "ContextTooShort";
    case ErrorKind::ScorerError: return "ScorerError";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::InvalidAnnotationSet: return "InvalidAnnotationSet";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace sqgen

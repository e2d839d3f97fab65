#include "elp/error.hpp"

namespace elp {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::MalformedEntry: return "MalformedEntry";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::MissingSerp: return "MissingSerp";
    case ErrorKind::BudgetTooSmall: return "BudgetTooSmall";
    case ErrorKind::EmptyTraining: return "EmptyTraining";
    case ErrorKind::InvalidHyperparameter: return "InvalidHyperparameter";
    case ErrorKind::EmptyGrid: return "EmptyGrid";
    case ErrorKind::NotFitted: return "NotFitted";
    case ErrorKind::EncoderUnavailable: return "EncoderUnavailable";
    case ErrorKind::EmbeddingUnavailable: return "EmbeddingUnavailable";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NoMultiPaneQueries: return "NoMultiPaneQueries";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Format: return "Format";
  }
  return "Unknown";
}

}  // namespace elp

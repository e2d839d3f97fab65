#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace elp {

enum class ErrorKind {
  MalformedRow,
  InvalidLabel,
  MalformedEntry,
  EmptyCorpus,
  MissingSerp,
  BudgetTooSmall,
  EmptyTraining,
  InvalidHyperparameter,
  EmptyGrid,
  NotFitted,
  EncoderUnavailable,
  EmbeddingUnavailable,
  NonFiniteLoss,
  LengthMismatch,
  EmptyInput,
  NoMultiPaneQueries,
  InvalidSpec,
  InvalidConfig,
  Io,
  Format,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace elp

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kinject {

/// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kGeneric = 1,
  kConfig = 2,
  kParse = 3,
  kNumeric = 4,
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A token id outside the vocabulary was handed to the model.
class InvalidToken : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class EmptyQuery : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class EmptyInput : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Raised by exhaustive test oracles when asked to enumerate too large a problem.
class OracleScaleError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Missing, unreadable, or version-mismatched artifact file (exit code 2).
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input records (exit code 3).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DuplicateDocument : public ParseError {
 public:
  explicit DuplicateDocument(std::string id)
      : ParseError("duplicate document id: " + id), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// Non-finite values in a loss, gradient, or hidden state (exit code 4).
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, std::ptrdiff_t iteration = -1)
      : std::runtime_error(what), iteration_(iteration) {}
  std::ptrdiff_t iteration() const noexcept { return iteration_; }

 private:
  std::ptrdiff_t iteration_;
};

/// The external knowledge generator could not be reached or answered badly.
class SourceUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kinject

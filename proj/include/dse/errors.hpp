#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dse {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A mask or record refers to a different graph than the one supplied.
class IdentityError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Structural invariant of a domain type violated at construction.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized input. `offset()` is the byte offset of the offending token.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Loss became non-finite during an optimization loop.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch, int step = -1)
      : Error(what + " (epoch " + std::to_string(epoch) +
              (step >= 0 ? ", step " + std::to_string(step) : std::string()) + ")"),
        epoch_(epoch),
        step_(step) {}
  int epoch() const noexcept { return epoch_; }
  int step() const noexcept { return step_; }

 private:
  int epoch_;
  int step_;
};

class DegenerateWeightsError : public Error {
 public:
  using Error::Error;
};

class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An upstream artifact (dataset, checkpoint, mask file) the caller pointed at does not exist.
class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::string& path)
      : Error("missing artifact: " + path + " (produce it first or fix the path)"), path_(path) {}
  MissingArtifactError(const std::string& path, const std::string& producer)
      : Error("missing artifact: " + path + " (run `" + producer + "` to produce it)"), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace dse

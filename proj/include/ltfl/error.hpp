#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ltfl {

/// Base class for every error raised by the simulator.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor, mask, or parameter shapes disagree.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
      : Error(what + ": expected " + std::to_string(expected) + ", got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  explicit DimensionError(const std::string& what) : Error(what) {}

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_ = 0;
  std::size_t actual_ = 0;
};

/// Invalid user-facing configuration. `field` is a dotted path into the config document.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)), message_(message) {}

  const std::string& field() const { return field_; }
  /// The message without the field prefix.
  const std::string& message() const { return message_; }

 private:
  std::string field_;
  std::string message_;
};

class TrainingDivergedError : public Error {
 public:
  explicit TrainingDivergedError(std::size_t epoch)
      : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)), epoch_(epoch) {}

  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Pruning would leave a prunable layer with no retained unit.
class LayerCollapseError : public Error {
 public:
  using Error::Error;
};

class InsufficientPopulationError : public Error {
 public:
  using Error::Error;
};

class UndefinedOverlapError : public Error {
 public:
  using Error::Error;
};

/// Failure inside one client's update; carries the client id.
class ClientError : public Error {
 public:
  ClientError(std::size_t client_id, const std::string& message)
      : Error("client " + std::to_string(client_id) + ": " + message), client_id_(client_id) {}

  std::size_t client_id() const { return client_id_; }

 private:
  std::size_t client_id_;
};

/// A federated round aborted; server state was rolled back to before the round.
class RoundError : public Error {
 public:
  RoundError(std::size_t round, const std::string& message)
      : Error("round " + std::to_string(round) + " aborted: " + message), round_(round) {}

  std::size_t round() const { return round_; }

 private:
  std::size_t round_;
};

}  // namespace ltfl

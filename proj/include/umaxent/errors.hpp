#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace umaxent {

// Base of every error raised by the library. Harness code maps these to
// exit status 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a type invariant (non-finite entry, bad normalization,
// duplicate identifiers, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::string axis, std::size_t expected, std::size_t actual)
      : Error("dimension mismatch on " + axis + ": expected " +
              std::to_string(expected) + ", got " + std::to_string(actual)),
        axis_(std::move(axis)),
        expected_(expected),
        actual_(actual) {}

  const std::string& axis() const { return axis_; }
  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::string axis_;
  std::size_t expected_;
  std::size_t actual_;
};

// An observation with positive empirical mass has zero probability under
// the current model.
class ZeroMarginal : public Error {
 public:
  explicit ZeroMarginal(std::size_t observation, const std::string& what = "observation")
      : Error("zero model marginal for " + what + " " + std::to_string(observation)),
        observation_(observation) {}
  std::size_t observation() const { return observation_; }

 private:
  std::size_t observation_;
};

class InfeasibleTarget : public Error {
 public:
  InfeasibleTarget(std::size_t feature, double target, double lo, double hi)
      : Error("target expectation " + std::to_string(target) + " for feature " +
              std::to_string(feature) + " lies outside [" + std::to_string(lo) + ", " +
              std::to_string(hi) + "]"),
        feature_(feature) {}
  std::size_t feature() const { return feature_; }

 private:
  std::size_t feature_;
};

class PreconditionViolated : public Error {
 public:
  using Error::Error;
};

class ZeroTrainingPrior : public Error {
 public:
  explicit ZeroTrainingPrior(std::size_t label)
      : Error("training prior is zero for label " + std::to_string(label) +
              " but the classifier output is positive"),
        label_(label) {}
  std::size_t label() const { return label_; }

 private:
  std::size_t label_;
};

class DegenerateRow : public Error {
 public:
  DegenerateRow() : Error("corrected classifier row has zero total mass") {}
};

// Failure inside one EM iteration, tagged with the iteration index.
class IterationError : public Error {
 public:
  IterationError(int iteration, const std::string& what)
      : Error("EM iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

}  // namespace umaxent

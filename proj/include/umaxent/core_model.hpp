#pragma once

// Problem data types and the pure probability computations shared by every
// solver path: partition function, log-linear distribution, observation
// marginals, posteriors and feature expectations.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "umaxent/errors.hpp"

namespace umaxent {

using Vector = std::vector<double>;

// Accepted slack on a probability vector's total before it is rejected.
inline constexpr double kNormalizationTolerance = 1e-9;

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  // Builds from nested rows; every row must have the same length.
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  std::vector<Vector> to_rows() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// The finite set of hidden model elements.
class ElementSpace {
 public:
  explicit ElementSpace(std::vector<std::string> ids);
  // Elements named "x0", "x1", ...
  static ElementSpace indexed(std::size_t n);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::optional<std::size_t> index_of(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
};

// K x |X| table of feature values phi_k(X).
class FeatureTable {
 public:
  FeatureTable(Matrix values, std::vector<std::string> names);
  // Names default to "f0", "f1", ...
  explicit FeatureTable(Matrix values);
  static FeatureTable from_rows(const std::vector<Vector>& rows);

  std::size_t num_features() const { return values_.rows(); }
  std::size_t num_elements() const { return values_.cols(); }
  double operator()(std::size_t k, std::size_t x) const { return values_(k, x); }
  std::span<const double> feature(std::size_t k) const { return values_.row(k); }
  const Matrix& values() const { return values_; }
  const std::vector<std::string>& names() const { return names_; }

  double min_value(std::size_t k) const;
  double max_value(std::size_t k) const;

 private:
  Matrix values_;
  std::vector<std::string> names_;
};

// Lagrange multipliers lambda_k. The normalization multiplier is folded
// into the partition function and never stored.
class Weights {
 public:
  Weights() = default;
  explicit Weights(Vector lambda);
  static Weights zeros(std::size_t k) { return Weights(Vector(k, 0.0)); }

  std::size_t size() const { return lambda_.size(); }
  double operator[](std::size_t k) const { return lambda_[k]; }
  const Vector& values() const { return lambda_; }

  bool operator==(const Weights&) const = default;

 private:
  Vector lambda_;
};

// Nonnegative vector summing to one. Construction renormalizes inputs whose
// total is within the tolerance and rejects anything further off.
class Distribution {
 public:
  Distribution() = default;
  explicit Distribution(Vector probs, double tolerance = kNormalizationTolerance);

  static Distribution uniform(std::size_t n);
  static Distribution point_mass(std::size_t n, std::size_t at);
  // Normalizes an arbitrary nonnegative vector with positive total.
  static Distribution normalize(Vector weights);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const Vector& probs() const { return probs_; }
  auto begin() const { return probs_.begin(); }
  auto end() const { return probs_.end(); }

 private:
  Vector probs_;
};

// Pr(omega | X) stored as |Omega| x |X|; every column sums to one.
class ObservationChannel {
 public:
  ObservationChannel(Matrix matrix, std::vector<std::string> observation_names);
  explicit ObservationChannel(Matrix matrix);
  static ObservationChannel from_rows(const std::vector<Vector>& rows);

  static ObservationChannel identity(std::size_t n);
  // Pr(omega | X) = 1/|Omega| for every pair.
  static ObservationChannel uninformative(std::size_t num_observations, std::size_t num_elements);

  std::size_t num_observations() const { return matrix_.rows(); }
  std::size_t num_elements() const { return matrix_.cols(); }
  double operator()(std::size_t omega, std::size_t x) const { return matrix_(omega, x); }
  const Matrix& matrix() const { return matrix_; }
  const std::vector<std::string>& observation_names() const { return names_; }

 private:
  Matrix matrix_;
  std::vector<std::string> names_;
};

// Empirical distribution over observations, either normalized from raw
// counts or supplied exactly.
class EmpiricalObservations {
 public:
  enum class Source { counts, exact };

  static EmpiricalObservations from_counts(std::vector<std::uint64_t> counts);
  static EmpiricalObservations exact(Distribution dist);

  const Distribution& dist() const { return dist_; }
  Source source() const { return source_; }
  // Empty unless built from counts.
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::size_t size() const { return dist_.size(); }
  double operator[](std::size_t i) const { return dist_[i]; }

 private:
  EmpiricalObservations(Distribution dist, Source source, std::vector<std::uint64_t> counts)
      : dist_(std::move(dist)), source_(source), counts_(std::move(counts)) {}

  Distribution dist_;
  Source source_;
  std::vector<std::uint64_t> counts_;
};

enum class ZeroMarginalPolicy { error, skip };

// Unnormalized log-probabilities sum_k lambda_k phi_k(X).
Vector scores(const Weights& weights, const FeatureTable& features);

// log sum_X exp(sum_k lambda_k phi_k(X)), evaluated with a max shift.
double log_partition(const Weights& weights, const FeatureTable& features);

Distribution log_linear_distribution(const Weights& weights, const FeatureTable& features);

// Pr(omega) = sum_X Pr(omega | X) Pr(X).
Distribution observation_marginal(const Distribution& model, const ObservationChannel& channel);

// Pr(X | omega). Throws ZeroMarginal when Pr(omega) = 0.
Distribution posterior(const Distribution& model, const ObservationChannel& channel,
                       std::size_t omega);
// Same, returning nullopt instead of throwing on a zero marginal.
std::optional<Distribution> try_posterior(const Distribution& model,
                                          const ObservationChannel& channel, std::size_t omega);

// E_dist[phi_k] for every k.
Vector feature_expectation(const Distribution& dist, const FeatureTable& features);

double entropy(const Distribution& dist);
double total_variation(const Distribution& a, const Distribution& b);
double sup_norm(std::span<const double> v);
double sup_norm_diff(std::span<const double> a, std::span<const double> b);

}  // namespace umaxent

#include "umaxent/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace umaxent {
namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ValidationError(std::string(what) + " entry " + std::to_string(i) + " is not finite");
    }
  }
}

std::vector<std::string> default_names(const char* prefix, std::size_t n) {
  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

void require_unique(const std::vector<std::string>& names, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& name : names) {
    if (!seen.insert(name).second) {
      throw ValidationError(std::string("duplicate ") + what + " identifier '" + name + "'");
    }
  }
}

void check_dims(const Weights& weights, const FeatureTable& features) {
  if (weights.size() != features.num_features()) {
    throw DimensionMismatch("features (K)", features.num_features(), weights.size());
  }
}

}  // namespace

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) {
      throw DimensionMismatch("matrix row " + std::to_string(r), m.cols(), rows[r].size());
    }
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

std::vector<Vector> Matrix::to_rows() const {
  std::vector<Vector> out;
  out.reserve(rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    auto span = row(r);
    out.emplace_back(span.begin(), span.end());
  }
  return out;
}

ElementSpace::ElementSpace(std::vector<std::string> ids) : ids_(std::move(ids)) {
  if (ids_.empty()) throw ValidationError("element space must contain at least one element");
  require_unique(ids_, "element");
}

ElementSpace ElementSpace::indexed(std::size_t n) { return ElementSpace(default_names("x", n)); }

std::optional<std::size_t> ElementSpace::index_of(const std::string& id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

FeatureTable::FeatureTable(Matrix values, std::vector<std::string> names)
    : values_(std::move(values)), names_(std::move(names)) {
  if (values_.rows() == 0) throw ValidationError("feature table needs at least one feature");
  if (values_.cols() == 0) throw ValidationError("feature table needs at least one element");
  if (names_.size() != values_.rows()) {
    throw DimensionMismatch("feature names", values_.rows(), names_.size());
  }
  require_unique(names_, "feature");
  for (std::size_t k = 0; k < values_.rows(); ++k) require_finite(values_.row(k), "feature");
}

FeatureTable::FeatureTable(Matrix values)
    : FeatureTable(values, default_names("f", values.rows())) {}

FeatureTable FeatureTable::from_rows(const std::vector<Vector>& rows) {
  return FeatureTable(Matrix::from_rows(rows));
}

double FeatureTable::min_value(std::size_t k) const {
  auto f = feature(k);
  return *std::min_element(f.begin(), f.end());
}

double FeatureTable::max_value(std::size_t k) const {
  auto f = feature(k);
  return *std::max_element(f.begin(), f.end());
}

Weights::Weights(Vector lambda) : lambda_(std::move(lambda)) {
  require_finite(lambda_, "weight");
}

Distribution::Distribution(Vector probs, double tolerance) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ValidationError("distribution must be non-empty");
  double total = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (!std::isfinite(probs_[i]) || probs_[i] < 0.0) {
      throw ValidationError("probability entry " + std::to_string(i) +
                            " is negative or not finite");
    }
    total += probs_[i];
  }
  if (std::abs(total - 1.0) > tolerance) {
    throw ValidationError("probabilities sum to " + std::to_string(total) + ", not 1");
  }
  for (double& p : probs_) p /= total;
}

Distribution Distribution::uniform(std::size_t n) {
  return Distribution(Vector(n, 1.0 / static_cast<double>(n)));
}

Distribution Distribution::point_mass(std::size_t n, std::size_t at) {
  Vector probs(n, 0.0);
  probs.at(at) = 1.0;
  return Distribution(std::move(probs));
}

Distribution Distribution::normalize(Vector weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw ValidationError("cannot normalize a vector with total " + std::to_string(total));
  }
  for (double& w : weights) w /= total;
  return Distribution(std::move(weights));
}

ObservationChannel::ObservationChannel(Matrix matrix, std::vector<std::string> observation_names)
    : matrix_(std::move(matrix)), names_(std::move(observation_names)) {
  if (matrix_.rows() == 0 || matrix_.cols() == 0) {
    throw ValidationError("observation channel must be non-empty");
  }
  if (names_.size() != matrix_.rows()) {
    throw DimensionMismatch("observation names", matrix_.rows(), names_.size());
  }
  require_unique(names_, "observation");
  for (std::size_t x = 0; x < matrix_.cols(); ++x) {
    double total = 0.0;
    for (std::size_t w = 0; w < matrix_.rows(); ++w) {
      double p = matrix_(w, x);
      if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
        throw ValidationError("channel entry (" + std::to_string(w) + ", " + std::to_string(x) +
                              ") is outside [0, 1]");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > kNormalizationTolerance) {
      throw ValidationError("channel column " + std::to_string(x) + " sums to " +
                            std::to_string(total) + ", not 1");
    }
    for (std::size_t w = 0; w < matrix_.rows(); ++w) matrix_(w, x) /= total;
  }
}

ObservationChannel::ObservationChannel(Matrix matrix)
    : ObservationChannel(matrix, default_names("o", matrix.rows())) {}

ObservationChannel ObservationChannel::from_rows(const std::vector<Vector>& rows) {
  return ObservationChannel(Matrix::from_rows(rows));
}

ObservationChannel ObservationChannel::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return ObservationChannel(std::move(m));
}

ObservationChannel ObservationChannel::uninformative(std::size_t num_observations,
                                                     std::size_t num_elements) {
  return ObservationChannel(
      Matrix(num_observations, num_elements, 1.0 / static_cast<double>(num_observations)));
}

EmpiricalObservations EmpiricalObservations::from_counts(std::vector<std::uint64_t> counts) {
  if (counts.empty()) throw ValidationError("observation counts must be non-empty");
  std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (total == 0) throw ValidationError("observation counts sum to zero");
  Vector probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return EmpiricalObservations(Distribution(std::move(probs)), Source::counts, std::move(counts));
}

EmpiricalObservations EmpiricalObservations::exact(Distribution dist) {
  return EmpiricalObservations(std::move(dist), Source::exact, {});
}

Vector scores(const Weights& weights, const FeatureTable& features) {
  check_dims(weights, features);
  Vector s(features.num_elements(), 0.0);
  for (std::size_t k = 0; k < features.num_features(); ++k) {
    const double lambda = weights[k];
    if (lambda == 0.0) continue;
    auto f = features.feature(k);
    for (std::size_t x = 0; x < s.size(); ++x) s[x] += lambda * f[x];
  }
  return s;
}

namespace {

double log_sum_exp(const Vector& s) {
  const double shift = *std::max_element(s.begin(), s.end());
  double total = 0.0;
  for (double v : s) total += std::exp(v - shift);
  return shift + std::log(total);
}

}  // namespace

double log_partition(const Weights& weights, const FeatureTable& features) {
  return log_sum_exp(scores(weights, features));
}

Distribution log_linear_distribution(const Weights& weights, const FeatureTable& features) {
  Vector s = scores(weights, features);
  const double log_z = log_sum_exp(s);
  for (double& v : s) v = std::exp(v - log_z);
  return Distribution(std::move(s));
}

Distribution observation_marginal(const Distribution& model, const ObservationChannel& channel) {
  if (model.size() != channel.num_elements()) {
    throw DimensionMismatch("elements (|X|)", channel.num_elements(), model.size());
  }
  Vector out(channel.num_observations(), 0.0);
  for (std::size_t w = 0; w < out.size(); ++w) {
    auto row = channel.matrix().row(w);
    double total = 0.0;
    for (std::size_t x = 0; x < row.size(); ++x) total += row[x] * model[x];
    out[w] = total;
  }
  return Distribution(std::move(out));
}

std::optional<Distribution> try_posterior(const Distribution& model,
                                          const ObservationChannel& channel, std::size_t omega) {
  if (model.size() != channel.num_elements()) {
    throw DimensionMismatch("elements (|X|)", channel.num_elements(), model.size());
  }
  if (omega >= channel.num_observations()) {
    throw DimensionMismatch("observation index", channel.num_observations(), omega);
  }
  auto row = channel.matrix().row(omega);
  Vector joint(model.size());
  double marginal = 0.0;
  for (std::size_t x = 0; x < joint.size(); ++x) {
    joint[x] = row[x] * model[x];
    marginal += joint[x];
  }
  if (!(marginal > 0.0)) return std::nullopt;
  for (double& j : joint) j /= marginal;
  return Distribution(std::move(joint));
}

Distribution posterior(const Distribution& model, const ObservationChannel& channel,
                       std::size_t omega) {
  auto post = try_posterior(model, channel, omega);
  if (!post) throw ZeroMarginal(omega);
  return *std::move(post);
}

Vector feature_expectation(const Distribution& dist, const FeatureTable& features) {
  if (dist.size() != features.num_elements()) {
    throw DimensionMismatch("elements (|X|)", features.num_elements(), dist.size());
  }
  Vector out(features.num_features(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto f = features.feature(k);
    double total = 0.0;
    for (std::size_t x = 0; x < f.size(); ++x) total += dist[x] * f[x];
    out[k] = total;
  }
  return out;
}

double entropy(const Distribution& dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double total_variation(const Distribution& a, const Distribution& b) {
  if (a.size() != b.size()) throw DimensionMismatch("distribution size", a.size(), b.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return 0.5 * total;
}

double sup_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double sup_norm_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("vector size", a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace umaxent

#include "umaxent/classifier_bridge.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "umaxent/log.hpp"

namespace umaxent {
namespace {

void require_row_stochastic(const Matrix& m, double tolerance, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw ValidationError(std::string(what) + " entry (" + std::to_string(r) + ", " +
                              std::to_string(c) + ") is outside [0, 1]");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > tolerance) {
      throw ValidationError(std::string(what) + " row " + std::to_string(r) + " sums to " +
                            std::to_string(total) + ", not 1");
    }
  }
}

void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double total = 0.0;
    for (double v : row) total += v;
    for (double& v : row) v /= total;
  }
}

}  // namespace

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ValidationError("label space must contain at least one label");
  std::unordered_set<std::string> seen;
  for (const auto& l : labels_) {
    if (!seen.insert(l).second) throw ValidationError("duplicate label '" + l + "'");
  }
}

LabelSpace LabelSpace::indexed(std::size_t n) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back("l" + std::to_string(i));
  return LabelSpace(std::move(labels));
}

LabelMap::LabelMap(std::vector<std::size_t> label_of_element, std::size_t num_labels)
    : label_of_(std::move(label_of_element)), num_labels_(num_labels) {
  if (label_of_.empty()) throw ValidationError("label map covers no elements");
  if (num_labels_ == 0) throw ValidationError("label map needs at least one label");
  for (std::size_t x = 0; x < label_of_.size(); ++x) {
    if (label_of_[x] >= num_labels_) {
      throw ValidationError("element " + std::to_string(x) + " maps to unknown label " +
                            std::to_string(label_of_[x]));
    }
  }
}

LabelMap LabelMap::from_matrix(const Matrix& d) {
  std::vector<std::size_t> labels(d.rows());
  for (std::size_t x = 0; x < d.rows(); ++x) {
    int ones = 0;
    for (std::size_t l = 0; l < d.cols(); ++l) {
      const double v = d(x, l);
      if (v == 1.0) {
        ++ones;
        labels[x] = l;
      } else if (v != 0.0) {
        throw ValidationError("label map entry (" + std::to_string(x) + ", " +
                              std::to_string(l) + ") is not 0 or 1");
      }
    }
    if (ones != 1) {
      throw ValidationError("label map row " + std::to_string(x) +
                            " must contain exactly one 1");
    }
  }
  return LabelMap(std::move(labels), d.cols());
}

LabelMap LabelMap::identity(std::size_t n) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i;
  return LabelMap(std::move(labels), n);
}

Matrix LabelMap::matrix() const {
  Matrix d(num_elements(), num_labels_);
  for (std::size_t x = 0; x < num_elements(); ++x) d(x, label_of_[x]) = 1.0;
  return d;
}

Vector LabelMap::label_marginal(const Distribution& model) const {
  if (model.size() != num_elements()) {
    throw DimensionMismatch("model (|X|)", num_elements(), model.size());
  }
  Vector out(num_labels_, 0.0);
  for (std::size_t x = 0; x < num_elements(); ++x) out[label_of_[x]] += model[x];
  return out;
}

LatentFactorization LabelMap::induced_factorization() const {
  std::vector<std::size_t> next(num_labels_, 0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t x = 0; x < num_elements(); ++x) {
    const std::size_t l = label_of_[x];
    pairs.emplace_back(l, next[l]++);
  }
  std::size_t num_z = 0;
  for (std::size_t c : next) num_z = std::max(num_z, c);
  std::vector<std::string> ys, zs;
  for (std::size_t l = 0; l < num_labels_; ++l) ys.push_back("l" + std::to_string(l));
  for (std::size_t z = 0; z < num_z; ++z) zs.push_back("z" + std::to_string(z));
  return LatentFactorization(std::move(ys), std::move(zs), std::move(pairs));
}

ClassifierProfile::ClassifierProfile(Matrix confusion) : confusion_(std::move(confusion)) {
  if (confusion_.rows() == 0 || confusion_.rows() != confusion_.cols()) {
    throw ValidationError("confusion matrix must be square and non-empty");
  }
  require_row_stochastic(confusion_, kNormalizationTolerance, "confusion matrix");
  normalize_rows(confusion_);
}

ClassifierProfile ClassifierProfile::perfect(std::size_t num_labels) {
  Matrix c(num_labels, num_labels);
  for (std::size_t i = 0; i < num_labels; ++i) c(i, i) = 1.0;
  return ClassifierProfile(std::move(c));
}

ObservationChannel ClassifierProfile::lift(const LabelMap& map) const {
  if (map.num_labels() != num_labels()) {
    throw DimensionMismatch("labels (|Xi|)", num_labels(), map.num_labels());
  }
  Matrix channel(num_labels(), map.num_elements());
  for (std::size_t x = 0; x < map.num_elements(); ++x) {
    for (std::size_t out = 0; out < num_labels(); ++out) {
      channel(out, x) = confusion_(map.label_of(x), out);
    }
  }
  return ObservationChannel(std::move(channel));
}

SoftClassifierBatch::SoftClassifierBatch(Matrix rows, Distribution training_prior,
                                         std::optional<Vector> sample_weights,
                                         double row_tolerance)
    : rows_(std::move(rows)), training_prior_(std::move(training_prior)) {
  if (rows_.rows() == 0) throw ValidationError("classifier batch has no rows");
  if (training_prior_.size() != rows_.cols()) {
    throw DimensionMismatch("training prior (|Xi|)", rows_.cols(), training_prior_.size());
  }
  for (std::size_t l = 0; l < training_prior_.size(); ++l) {
    if (!(training_prior_[l] > 0.0)) throw ZeroTrainingPrior(l);
  }
  require_row_stochastic(rows_, row_tolerance, "classifier batch");
  normalize_rows(rows_);
  if (sample_weights) {
    if (sample_weights->size() != rows_.rows()) {
      throw DimensionMismatch("sample weights", rows_.rows(), sample_weights->size());
    }
    weights_ = Distribution::normalize(*std::move(sample_weights)).probs();
  } else {
    weights_.assign(rows_.rows(), 1.0 / static_cast<double>(rows_.rows()));
  }
}

Distribution SoftClassifierBatch::row(std::size_t r) const {
  auto span = rows_.row(r);
  return Distribution(Vector(span.begin(), span.end()));
}

UMaxEntProblem hard_label_problem(const Distribution& empirical_labels,
                                  const ClassifierProfile& profile, const LabelMap& map,
                                  const FeatureTable& features) {
  return UMaxEntProblem(ElementSpace::indexed(map.num_elements()), features, profile.lift(map),
                        EmpiricalObservations::exact(empirical_labels));
}

TargetExpectations hard_label_e_step(const Distribution& empirical_labels,
                                     const ClassifierProfile& profile, const LabelMap& map,
                                     const Weights& current, const FeatureTable& features,
                                     ZeroMarginalPolicy policy) {
  return e_step(hard_label_problem(empirical_labels, profile, map, features), current, policy);
}

Distribution soft_correction(const Distribution& batch_row, const Distribution& training_prior,
                             const Distribution& model_prior) {
  const std::size_t n = batch_row.size();
  if (training_prior.size() != n) throw DimensionMismatch("training prior", n, training_prior.size());
  if (model_prior.size() != n) throw DimensionMismatch("model prior", n, model_prior.size());
  Vector out(n, 0.0);
  double total = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    if (batch_row[l] <= 0.0) continue;
    if (!(training_prior[l] > 0.0)) throw ZeroTrainingPrior(l);
    out[l] = batch_row[l] * model_prior[l] / training_prior[l];
    total += out[l];
  }
  if (!(total > 0.0)) throw DegenerateRow();
  for (double& v : out) v /= total;
  return Distribution(std::move(out));
}

SoftClassifierEStep::SoftClassifierEStep(const SoftClassifierBatch& batch, const LabelMap& map,
                                         const FeatureTable& features, SoftEStepOptions options)
    : batch_(batch), map_(map), features_(features), options_(options) {
  if (batch.num_labels() != map.num_labels()) {
    throw DimensionMismatch("labels (|Xi|)", map.num_labels(), batch.num_labels());
  }
  if (features.num_elements() != map.num_elements()) {
    throw DimensionMismatch("feature columns (|X|)", map.num_elements(), features.num_elements());
  }
}

EStepTerms SoftClassifierEStep::terms(const Distribution& model) const {
  const std::size_t num_labels = map_.num_labels();
  const std::size_t n = map_.num_elements();
  const Vector label_prior = map_.label_marginal(model);
  const Vector& train = batch_.training_prior().probs();

  // Per-label reweighting applied to every row: Pr(xi) / Pr_theta(xi), or 1
  // when the correction is ablated.
  Vector factor(num_labels);
  for (std::size_t l = 0; l < num_labels; ++l) {
    factor[l] = options_.ablate_correction ? 1.0 : label_prior[l] / train[l];
  }

  // Entropy of Pr(X | xi) = Pr(X) / Pr(xi) within each label.
  Vector h_within(num_labels, 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    const std::size_t l = map_.label_of(x);
    if (model[x] <= 0.0) continue;
    const double p = model[x] / label_prior[l];
    h_within[l] -= p * std::log(p);
  }

  // Accumulated corrected label mass over the batch; the feature targets
  // only depend on it through E[phi | xi].
  Vector label_mass(num_labels, 0.0);
  double u_star = 0.0;
  double h = 0.0;
  double kept = 0.0;
  std::size_t degenerate = 0;
  Vector corrected(num_labels);
  for (std::size_t r = 0; r < batch_.num_samples(); ++r) {
    const double weight = batch_.sample_weights()[r];
    if (weight <= 0.0) continue;
    auto row = batch_.rows().row(r);
    double total = 0.0;
    for (std::size_t l = 0; l < num_labels; ++l) {
      corrected[l] = row[l] * factor[l];
      total += corrected[l];
    }
    if (!(total > 0.0)) {
      ++degenerate;
      continue;
    }
    kept += weight;
    for (std::size_t l = 0; l < num_labels; ++l) {
      const double c = corrected[l] / total;
      if (c <= 0.0) continue;
      if (!(label_prior[l] > 0.0)) {
        if (options_.zero_marginal == ZeroMarginalPolicy::error) throw ZeroMarginal(l, "label");
        continue;
      }
      label_mass[l] += weight * c;
      const double log_ratio = std::log(row[l] / train[l]);
      u_star += weight * c * log_ratio;
      h += weight * c * (h_within[l] - std::log(c));
    }
  }
  if (degenerate > 0) {
    log::warn("skipped " + std::to_string(degenerate) +
              " classifier rows whose corrected mass is zero");
  }
  if (!(kept > 0.0)) throw DegenerateRow();

  Vector phi_hat(features_.num_features(), 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    const std::size_t l = map_.label_of(x);
    if (label_mass[l] <= 0.0 || model[x] <= 0.0) continue;
    const double w = label_mass[l] * model[x] / label_prior[l] / kept;
    for (std::size_t k = 0; k < phi_hat.size(); ++k) phi_hat[k] += w * features_(k, x);
  }
  return {TargetExpectations(std::move(phi_hat)), u_star / kept, h / kept};
}

LogLikelihood SoftClassifierEStep::log_likelihood(const Distribution& model) const {
  const Vector label_prior = map_.label_marginal(model);
  const Vector& train = batch_.training_prior().probs();
  LogLikelihood out;
  for (std::size_t r = 0; r < batch_.num_samples(); ++r) {
    const double weight = batch_.sample_weights()[r];
    if (weight <= 0.0) continue;
    auto row = batch_.rows().row(r);
    double total = 0.0;
    for (std::size_t l = 0; l < row.size(); ++l) total += row[l] * label_prior[l] / train[l];
    if (!(total > 0.0)) {
      out.value = -std::numeric_limits<double>::infinity();
      out.finite = false;
      return out;
    }
    out.value += weight * std::log(total);
  }
  return out;
}

TargetExpectations soft_e_step(const SoftClassifierBatch& batch, const LabelMap& map,
                               const Weights& current, const FeatureTable& features,
                               const SoftEStepOptions& options) {
  SoftClassifierEStep estep(batch, map, features, options);
  return estep.terms(log_linear_distribution(current, features)).phi_hat;
}

double soft_constraint_residual(const SoftClassifierBatch& batch, const LabelMap& map,
                                const Weights& weights, const FeatureTable& features,
                                const SoftEStepOptions& options) {
  const Distribution model = log_linear_distribution(weights, features);
  const Vector lhs = feature_expectation(model, features);
  SoftClassifierEStep estep(batch, map, features, options);
  return sup_norm_diff(lhs, estep.terms(model).phi_hat.values());
}

void ClassifierProblem::validate() const {
  if (features.num_elements() != map.num_elements()) {
    throw DimensionMismatch("feature columns (|X|)", map.num_elements(), features.num_elements());
  }
  if (batch) {
    if (batch->num_labels() != map.num_labels()) {
      throw DimensionMismatch("batch columns (|Xi|)", map.num_labels(), batch->num_labels());
    }
    return;
  }
  if (!profile || !empirical_labels) {
    throw ValidationError(
        "classifier problem needs either a soft batch or a confusion matrix with empirical labels");
  }
  if (profile->num_labels() != map.num_labels()) {
    throw DimensionMismatch("confusion matrix (|Xi|)", map.num_labels(), profile->num_labels());
  }
  if (empirical_labels->size() != map.num_labels()) {
    throw DimensionMismatch("empirical labels (|Xi|)", map.num_labels(), empirical_labels->size());
  }
}

EmResult classifier_em_solve(const ClassifierProblem& problem, const EmConfig& config,
                             bool ablate_correction) {
  problem.validate();
  if (problem.is_soft()) {
    SoftClassifierEStep estep(*problem.batch, problem.map, problem.features,
                              {ablate_correction, config.zero_marginal});
    return em_solve(estep, config);
  }
  const UMaxEntProblem lifted = hard_label_problem(*problem.empirical_labels, *problem.profile,
                                                   problem.map, problem.features);
  return em_solve(lifted, config);
}

}  // namespace umaxent

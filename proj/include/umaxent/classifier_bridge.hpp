#pragma once

// Constraints built from black-box classifier outputs over raw samples.
//
// Hard labels: a confusion matrix C[true, output] is lifted to an
// observation channel Pr(xi | X) = C[d(X), xi] and the standard E-step runs
// on it.
//
// Soft outputs: each row Pr_theta(xi | r) carries the classifier's training
// label prior. The row is reweighted by Pr(xi) / Pr_theta(xi), with Pr(xi)
// the current model's label marginal, renormalized, and pushed through
// Pr(X | xi) = d(X, xi) Pr(X) / Pr(xi).

#include <optional>
#include <string>
#include <vector>

#include "umaxent/core_model.hpp"
#include "umaxent/dual_solver.hpp"
#include "umaxent/em_engine.hpp"
#include "umaxent/specializations.hpp"

namespace umaxent {

class LabelSpace {
 public:
  explicit LabelSpace(std::vector<std::string> labels);
  static LabelSpace indexed(std::size_t n);
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
};

// Deterministic d(X, xi): every element maps to exactly one label.
class LabelMap {
 public:
  LabelMap(std::vector<std::size_t> label_of_element, std::size_t num_labels);
  // From the |X| x |Xi| 0/1 matrix; each row must hold exactly one 1.
  static LabelMap from_matrix(const Matrix& d);
  static LabelMap identity(std::size_t n);

  std::size_t num_elements() const { return label_of_.size(); }
  std::size_t num_labels() const { return num_labels_; }
  std::size_t label_of(std::size_t x) const { return label_of_[x]; }
  const std::vector<std::size_t>& labels() const { return label_of_; }
  Matrix matrix() const;

  // Pr(xi) = sum_X d(X, xi) Pr(X).
  Vector label_marginal(const Distribution& model) const;
  // Y = label, Z = rank of the element among those sharing its label.
  LatentFactorization induced_factorization() const;

 private:
  std::vector<std::size_t> label_of_;
  std::size_t num_labels_;
};

class ClassifierProfile {
 public:
  // Row-stochastic |Xi| x |Xi| matrix C[true_label, output_label].
  explicit ClassifierProfile(Matrix confusion);
  static ClassifierProfile perfect(std::size_t num_labels);

  const Matrix& confusion() const { return confusion_; }
  std::size_t num_labels() const { return confusion_.rows(); }

  // Pr(xi_out | X) = C[d(X), xi_out] as an |Xi| x |X| channel.
  ObservationChannel lift(const LabelMap& map) const;

 private:
  Matrix confusion_;
};

class SoftClassifierBatch {
 public:
  // Rows must be row-stochastic within `row_tolerance` and are renormalized.
  // The training prior must be strictly positive.
  SoftClassifierBatch(Matrix rows, Distribution training_prior,
                      std::optional<Vector> sample_weights = std::nullopt,
                      double row_tolerance = 1e-6);

  std::size_t num_samples() const { return rows_.rows(); }
  std::size_t num_labels() const { return rows_.cols(); }
  const Matrix& rows() const { return rows_; }
  Distribution row(std::size_t r) const;
  const Distribution& training_prior() const { return training_prior_; }
  // Normalized Pr~(r); uniform unless weights were supplied.
  const Vector& sample_weights() const { return weights_; }

 private:
  Matrix rows_;
  Distribution training_prior_;
  Vector weights_;
};

TargetExpectations hard_label_e_step(const Distribution& empirical_labels,
                                     const ClassifierProfile& profile, const LabelMap& map,
                                     const Weights& current, const FeatureTable& features,
                                     ZeroMarginalPolicy policy = ZeroMarginalPolicy::error);

// The uMaxEnt problem whose channel is the lifted confusion matrix.
UMaxEntProblem hard_label_problem(const Distribution& empirical_labels,
                                  const ClassifierProfile& profile, const LabelMap& map,
                                  const FeatureTable& features);

// out(xi) proportional to row(xi) * model_prior(xi) / training_prior(xi).
Distribution soft_correction(const Distribution& batch_row, const Distribution& training_prior,
                             const Distribution& model_prior);

struct SoftEStepOptions {
  // Skip the prior replacement and use the raw rows.
  bool ablate_correction = false;
  ZeroMarginalPolicy zero_marginal = ZeroMarginalPolicy::error;
};

// E-step over a soft batch. The log-likelihood reported for EM is
//   sum_r Pr~(r) log sum_xi row_r(xi) Pr(xi) / Pr_theta(xi),
// the data likelihood up to a model-independent constant when the
// classifier's Pr_theta(r | xi) is taken as the observation channel.
class SoftClassifierEStep final : public EStep {
 public:
  SoftClassifierEStep(const SoftClassifierBatch& batch, const LabelMap& map,
                      const FeatureTable& features, SoftEStepOptions options = {});

  const FeatureTable& features() const override { return features_; }
  EStepTerms terms(const Distribution& model) const override;
  LogLikelihood log_likelihood(const Distribution& model) const override;

 private:
  const SoftClassifierBatch& batch_;
  const LabelMap& map_;
  const FeatureTable& features_;
  SoftEStepOptions options_;
};

TargetExpectations soft_e_step(const SoftClassifierBatch& batch, const LabelMap& map,
                               const Weights& current, const FeatureTable& features,
                               const SoftEStepOptions& options = {});

// || E_lambda[phi] - soft_e_step(lambda) ||_inf.
double soft_constraint_residual(const SoftClassifierBatch& batch, const LabelMap& map,
                                const Weights& weights, const FeatureTable& features,
                                const SoftEStepOptions& options = {});

// Either a hard-label problem (profile + empirical label distribution) or a
// soft batch, over a shared feature table and label map.
struct ClassifierProblem {
  FeatureTable features;
  LabelMap map;
  std::optional<ClassifierProfile> profile;
  std::optional<Distribution> empirical_labels;
  std::optional<SoftClassifierBatch> batch;

  bool is_soft() const { return batch.has_value(); }
  void validate() const;
};

EmResult classifier_em_solve(const ClassifierProblem& problem, const EmConfig& config = {},
                             bool ablate_correction = false);

}  // namespace umaxent

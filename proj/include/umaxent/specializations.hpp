#pragma once

// Executable forms of the two reductions: deterministic channels recover
// standard maximum entropy, and channels that observe Y perfectly while
// hiding Z recover latent maximum entropy.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "umaxent/core_model.hpp"
#include "umaxent/dual_solver.hpp"
#include "umaxent/em_engine.hpp"

namespace umaxent {

struct ChannelDeterminism {
  // Every posterior Pr(X | omega) with positive marginal is a point mass
  // under the supplied model (entries within 1e-12 of 0 or 1).
  bool under_model = false;
  // Each observation row is supported on at most one element, so the
  // posteriors are point masses under every model.
  bool for_all_models = false;
};

ChannelDeterminism is_deterministic_channel(const ObservationChannel& channel,
                                            const Distribution& model);

bool has_disjoint_supports(const ObservationChannel& channel);

// Pr~(X) = sum of Pr~(omega) over the observations that identify X. Requires
// disjoint supports; observations whose row is entirely zero carry no
// element and must have zero empirical mass.
Distribution induced_element_distribution(const UMaxEntProblem& problem);

SolverResult solve_standard_maxent(const Distribution& empirical_x, const FeatureTable& features,
                                   const SolverConfig& config = {});

// Per-element value of the term the log-linear approximation drops from the
// Lagrangian gradient:
//   sum_k lambda_k sum_omega Pr~(omega) phi_k(X)
//     (Pr(omega|X) Pr(omega) - Pr(omega|X)^2 Pr(X)) / Pr(omega)^2
// It vanishes identically for deterministic channels.
Vector dropped_gradient_term(const UMaxEntProblem& problem, const Weights& weights);

struct ReductionReport {
  std::string reduction;  // "standard" or "latent"
  std::optional<double> tv_distance;
  double residual = 0.0;
  double dropped_term_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  // Latent only: largest pointwise gap between the E-step and the latent
  // right-hand side over the sampled models.
  std::optional<double> identity_max_error;
};

// Throws PreconditionViolated unless the channel has disjoint supports.
ReductionReport verify_maxent_reduction(const UMaxEntProblem& problem, const EmConfig& config = {});

// X decomposes into an observed part Y and a hidden completion Z.
class LatentFactorization {
 public:
  // pairs[x] = (y, z) for element x. Pairs must be distinct and in range.
  LatentFactorization(std::vector<std::string> y_labels, std::vector<std::string> z_labels,
                      std::vector<std::pair<std::size_t, std::size_t>> pairs);
  // Full product Y x Z with x = y * |Z| + z.
  static LatentFactorization grid(std::size_t num_y, std::size_t num_z);

  std::size_t num_y() const { return y_labels_.size(); }
  std::size_t num_z() const { return z_labels_.size(); }
  std::size_t num_elements() const { return pairs_.size(); }
  const std::vector<std::string>& y_labels() const { return y_labels_; }
  const std::vector<std::string>& z_labels() const { return z_labels_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }

  std::size_t y_of(std::size_t x) const { return pairs_[x].first; }
  std::size_t z_of(std::size_t x) const { return pairs_[x].second; }
  std::optional<std::size_t> embed(std::size_t y, std::size_t z) const;
  // Valid completions Z_Y in ascending order.
  const std::vector<std::size_t>& completions(std::size_t y) const { return completions_[y]; }

  // Pr(omega | X) = 1 iff the Y part of X is omega; |Omega| = |Y|.
  ObservationChannel y_channel() const;

 private:
  std::vector<std::string> y_labels_;
  std::vector<std::string> z_labels_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::vector<std::vector<std::size_t>> completions_;
  // |Y| x |Z| table of element indices, -1 where no element exists.
  std::vector<long> table_;
};

// sum_Y Pr~(Y) sum_{Z in Z_Y} Pr(Z | Y) phi_k(Y, Z) under the given model.
Vector latent_constraint_rhs(const LatentFactorization& fact, const Distribution& empirical_y,
                             const Distribution& model, const FeatureTable& features);

struct LatentCheckOptions {
  int num_models = 100;
  std::uint64_t seed = 1;
  double weight_scale = 2.0;
};

// Checks e_step on the Y-channel against latent_constraint_rhs at random
// models, then runs EM and reports the converged residual.
ReductionReport verify_latent_reduction(const LatentFactorization& fact,
                                        const Distribution& empirical_y,
                                        const FeatureTable& features, const EmConfig& config = {},
                                        const LatentCheckOptions& options = {});

}  // namespace umaxent

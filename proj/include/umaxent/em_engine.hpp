#pragma once

// Expectation-maximization for uncertain maximum entropy. Each iteration
// computes posterior-corrected target expectations under the current model
// (E-step) and re-solves the convex MaxEnt dual against them (M-step).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "umaxent/core_model.hpp"
#include "umaxent/dual_solver.hpp"

namespace umaxent {

class UMaxEntProblem {
 public:
  UMaxEntProblem(ElementSpace space, FeatureTable features, ObservationChannel channel,
                 EmpiricalObservations empirical);

  const ElementSpace& space() const { return space_; }
  const FeatureTable& features() const { return features_; }
  const ObservationChannel& channel() const { return channel_; }
  const EmpiricalObservations& empirical() const { return empirical_; }

 private:
  ElementSpace space_;
  FeatureTable features_;
  ObservationChannel channel_;
  EmpiricalObservations empirical_;
};

enum class InitMode { zero, random, prior };

struct EmConfig {
  double lambda_tol = 1e-6;
  double likelihood_tol = 1e-10;
  int max_em_iter = 500;
  SolverConfig inner;
  InitMode init = InitMode::zero;
  std::uint64_t seed = 0;
  double random_scale = 0.1;
  // Used in place of the model for the first E-step when init == prior.
  std::optional<Distribution> prior;
  ZeroMarginalPolicy zero_marginal = ZeroMarginalPolicy::error;
  // Number of independent starts; the highest final likelihood wins. Starts
  // after the first use random init with seed + i.
  int restarts = 1;

  void validate() const;
};

struct EmRecord {
  int iteration = 0;
  Vector lambda;
  Vector phi_hat;
  double loglik = 0.0;
  double q = 0.0;
  double h = 0.0;
  double u_star = 0.0;
  double residual = 0.0;
  int inner_iterations = 0;
};

// Record 0 holds the initial weights. Record t >= 1 holds the M-step output
// lambda_t, the E-step target phi_hat computed under lambda_{t-1}, L(lambda_t),
// the decomposition U*(lambda_{t-1}) + Q(lambda_t, lambda_{t-1}) +
// H(lambda_{t-1}), and the constraint residual at lambda_t.
struct EmTrace {
  std::vector<EmRecord> records;

  std::size_t size() const { return records.size(); }
  // Header: iter,loglik,Q,H,U_star,residual,lambda_0..lambda_{K-1}
  void write_csv(std::ostream& out) const;
};

enum class EmStatus { converged, max_iter_exceeded };

struct EmResult {
  Weights weights;
  EmTrace trace;
  EmStatus status = EmStatus::max_iter_exceeded;
  bool converged = false;
  // "lambda" or "likelihood" when converged.
  std::string stop_reason;
  int iterations = 0;
  double loglik = 0.0;
  double residual = 0.0;
};

struct LogLikelihood {
  double value = 0.0;
  // False when some observation with empirical mass has zero model marginal;
  // value is then -infinity.
  bool finite = true;
};

struct Decomposition {
  double u_star = 0.0;
  double q = 0.0;
  double h = 0.0;
  double total() const { return u_star + q + h; }
};

// Posterior-side quantities of one E-step, all computed under a fixed
// previous model.
struct EStepTerms {
  TargetExpectations phi_hat;
  double u_star = 0.0;
  double h = 0.0;
};

// The model-dependent pieces an EM run needs. The observation-channel
// problem is one implementation; classifier-derived constraints are others.
class EStep {
 public:
  virtual ~EStep() = default;
  virtual const FeatureTable& features() const = 0;
  virtual EStepTerms terms(const Distribution& model) const = 0;
  virtual LogLikelihood log_likelihood(const Distribution& model) const = 0;
};

class ObservationEStep final : public EStep {
 public:
  explicit ObservationEStep(const UMaxEntProblem& problem,
                            ZeroMarginalPolicy policy = ZeroMarginalPolicy::error)
      : problem_(problem), policy_(policy) {}

  const FeatureTable& features() const override { return problem_.features(); }
  EStepTerms terms(const Distribution& model) const override;
  LogLikelihood log_likelihood(const Distribution& model) const override;

 private:
  const UMaxEntProblem& problem_;
  ZeroMarginalPolicy policy_;
};

// phi_hat_k = sum_omega Pr~(omega) sum_X Pr_lambda(X | omega) phi_k(X).
TargetExpectations e_step(const UMaxEntProblem& problem, const Weights& current,
                          ZeroMarginalPolicy policy = ZeroMarginalPolicy::error);

// L(lambda) = sum_omega Pr~(omega) log Pr_lambda(omega), evaluated in log space.
LogLikelihood log_likelihood(const UMaxEntProblem& problem, const Weights& weights);

// Lower bound U*(lambda_prev) + Q(lambda, lambda_prev) + H(lambda_prev) <= L(lambda),
// tight at lambda = lambda_prev.
Decomposition likelihood_decomposition(const UMaxEntProblem& problem, const Weights& lambda,
                                       const Weights& lambda_prev,
                                       ZeroMarginalPolicy policy = ZeroMarginalPolicy::error);

// || E_lambda[phi] - e_step(problem, lambda) ||_inf.
double constraint_residual(const UMaxEntProblem& problem, const Weights& weights,
                           ZeroMarginalPolicy policy = ZeroMarginalPolicy::error);

EmResult em_solve(const UMaxEntProblem& problem, const EmConfig& config = {});

// Same loop with an arbitrary E-step.
EmResult em_solve(const EStep& estep, const EmConfig& config = {});

}  // namespace umaxent

#pragma once

// Convex dual of the maximum-entropy program for a fixed target vector:
//   D(lambda) = log Z(lambda) - sum_k lambda_k phi_hat_k
//   dD/dlambda_k = E_lambda[phi_k] - phi_hat_k
// Minimizing D is the whole of standard MaxEnt and the M-step of EM.

#include <cstddef>
#include <string>

#include "umaxent/core_model.hpp"

namespace umaxent {

// Target feature expectations phi_hat. Feasibility against a feature table
// (each coordinate inside [min_X phi_k, max_X phi_k]) is checked by
// minimize_dual, since the same vector may be paired with several tables.
class TargetExpectations {
 public:
  TargetExpectations() = default;
  explicit TargetExpectations(Vector phi_hat);

  std::size_t size() const { return phi_hat_.size(); }
  double operator[](std::size_t k) const { return phi_hat_[k]; }
  const Vector& values() const { return phi_hat_; }

 private:
  Vector phi_hat_;
};

// Throws InfeasibleTarget for the first coordinate outside its feature range.
void check_feasible(const TargetExpectations& target, const FeatureTable& features);

// Damped Newton on the exact feature covariance is the default; the dual's
// Hessian is K x K and cheap at the intended scale. L-BFGS and plain
// steepest descent share the same line search.
enum class DescentMethod { newton, lbfgs, gradient_descent };

struct SolverConfig {
  double grad_tol = 1e-8;
  int max_iter = 10'000;
  double initial_step = 1.0;
  double backtrack_factor = 0.5;
  double sufficient_decrease = 1e-4;
  // Iteration stops once any |lambda_k| exceeds this.
  double divergence_guard = 1e3;
  DescentMethod method = DescentMethod::newton;
  int lbfgs_memory = 8;

  void validate() const;
};

enum class SolverStatus { converged, max_iter_exceeded, diverged, stalled };

const char* to_string(SolverStatus status);

struct SolverResult {
  Weights weights;
  double dual_value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  SolverStatus status = SolverStatus::max_iter_exceeded;
  std::string diagnostic;
  // Dual value at the start and after every accepted step. Later entries
  // are the starting value plus the accurately computed step changes, so
  // they can differ from a fresh dual_value() evaluation in the last bits.
  Vector dual_history;
};

double dual_value(const Weights& weights, const TargetExpectations& target,
                  const FeatureTable& features);

Vector dual_gradient(const Weights& weights, const TargetExpectations& target,
                     const FeatureTable& features);

// Minimizes the dual from `init`. Never throws for non-convergence: the
// best iterate is returned with converged = false and a status explaining
// why. Throws InfeasibleTarget up front for out-of-range targets.
SolverResult minimize_dual(const TargetExpectations& target, const FeatureTable& features,
                           const Weights& init, const SolverConfig& config = {});

}  // namespace umaxent

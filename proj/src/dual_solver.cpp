#include "umaxent/dual_solver.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include <Eigen/Dense>

#include "umaxent/log.hpp"

namespace umaxent {
namespace {

struct Evaluation {
  double value = 0.0;
  Vector gradient;
  double grad_norm = 0.0;
  Vector probs;
  Vector means;
};

double dot(const Vector& a, const Vector& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
  return total;
}

void check_dims(const Weights& weights, const TargetExpectations& target,
                const FeatureTable& features) {
  if (target.size() != features.num_features()) {
    throw DimensionMismatch("target expectations (K)", features.num_features(), target.size());
  }
  if (weights.size() != features.num_features()) {
    throw DimensionMismatch("features (K)", features.num_features(), weights.size());
  }
}

Evaluation evaluate(const Vector& lambda, const TargetExpectations& target,
                    const FeatureTable& features) {
  Weights w(lambda);
  Vector s = scores(w, features);
  double shift = s[0];
  for (double v : s) shift = std::max(shift, v);
  double total = 0.0;
  for (double& v : s) {
    v = std::exp(v - shift);
    total += v;
  }
  const double log_z = shift + std::log(total);
  for (double& v : s) v /= total;

  Evaluation e;
  e.value = log_z;
  e.gradient.resize(lambda.size());
  e.means.resize(lambda.size());
  for (std::size_t k = 0; k < lambda.size(); ++k) {
    auto f = features.feature(k);
    double mean = 0.0;
    for (std::size_t x = 0; x < f.size(); ++x) mean += s[x] * f[x];
    e.value -= lambda[k] * target[k];
    e.means[k] = mean;
    e.gradient[k] = mean - target[k];
  }
  e.grad_norm = sup_norm(e.gradient);
  e.probs = std::move(s);
  return e;
}

// D(trial) - D(current) for trial = lambda + step * direction. Near the
// optimum the two dual values agree to the last few bits, so the difference
// is formed from log sum_x p(x) exp(delta_x) rather than by subtraction.
double dual_change(const Evaluation& current, const Evaluation& next, const Vector& direction,
                   double step, const TargetExpectations& target, const FeatureTable& features) {
  Vector delta(current.probs.size(), 0.0);
  double widest = 0.0;
  for (std::size_t k = 0; k < direction.size(); ++k) {
    auto f = features.feature(k);
    for (std::size_t x = 0; x < f.size(); ++x) delta[x] += step * direction[k] * f[x];
  }
  for (double d : delta) widest = std::max(widest, std::abs(d));
  if (widest > 0.5) return next.value - current.value;
  double u = 0.0;
  for (std::size_t x = 0; x < delta.size(); ++x) u += current.probs[x] * std::expm1(delta[x]);
  double linear = 0.0;
  for (std::size_t k = 0; k < direction.size(); ++k) linear += step * direction[k] * target[k];
  return std::log1p(u) - linear;
}

// Pseudo-inverse Newton step -H^+ g on the feature covariance H. H is
// singular when feature rows are affinely dependent; eigen-directions below
// a relative cutoff are dropped so rounding noise in the gradient cannot push
// lambda along directions that leave the distribution unchanged.
Vector newton_direction(const Evaluation& e, const FeatureTable& features) {
  const Eigen::Index dim = static_cast<Eigen::Index>(e.gradient.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd centered(dim);
  for (std::size_t x = 0; x < e.probs.size(); ++x) {
    if (e.probs[x] == 0.0) continue;
    for (Eigen::Index a = 0; a < dim; ++a) centered[a] = features(a, x) - e.means[a];
    h.selfadjointView<Eigen::Lower>().rankUpdate(centered, e.probs[x]);
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h.selfadjointView<Eigen::Lower>());
  if (eig.info() != Eigen::Success) return {};
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double cutoff = 1e-12 * std::max(values.maxCoeff(), 0.0);
  const Eigen::Map<const Eigen::VectorXd> g(e.gradient.data(), dim);
  Eigen::VectorXd coeffs = eig.eigenvectors().transpose() * g;
  for (Eigen::Index i = 0; i < dim; ++i) coeffs[i] = values[i] > cutoff ? -coeffs[i] / values[i] : 0.0;
  const Eigen::VectorXd d = eig.eigenvectors() * coeffs;
  return Vector(d.data(), d.data() + dim);
}

// Two-loop recursion; returns -H * g for the implicit inverse Hessian H.
Vector lbfgs_direction(const Vector& g, const std::deque<Vector>& s_hist,
                       const std::deque<Vector>& y_hist) {
  Vector q = g;
  const std::size_t m = s_hist.size();
  Vector alpha(m), rho(m);
  for (std::size_t i = m; i-- > 0;) {
    rho[i] = 1.0 / dot(y_hist[i], s_hist[i]);
    alpha[i] = rho[i] * dot(s_hist[i], q);
    for (std::size_t k = 0; k < q.size(); ++k) q[k] -= alpha[i] * y_hist[i][k];
  }
  if (m > 0) {
    const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
    for (double& v : q) v *= gamma;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double beta = rho[i] * dot(y_hist[i], q);
    for (std::size_t k = 0; k < q.size(); ++k) q[k] += s_hist[i][k] * (alpha[i] - beta);
  }
  for (double& v : q) v = -v;
  return q;
}

}  // namespace

TargetExpectations::TargetExpectations(Vector phi_hat) : phi_hat_(std::move(phi_hat)) {
  for (std::size_t k = 0; k < phi_hat_.size(); ++k) {
    if (!std::isfinite(phi_hat_[k])) {
      throw ValidationError("target expectation " + std::to_string(k) + " is not finite");
    }
  }
}

void check_feasible(const TargetExpectations& target, const FeatureTable& features) {
  if (target.size() != features.num_features()) {
    throw DimensionMismatch("target expectations (K)", features.num_features(), target.size());
  }
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double lo = features.min_value(k);
    const double hi = features.max_value(k);
    // Slack absorbs rounding in targets assembled from posterior sums.
    const double slack = 1e-12 * (1.0 + std::max(std::abs(lo), std::abs(hi)));
    if (target[k] < lo - slack || target[k] > hi + slack) {
      throw InfeasibleTarget(k, target[k], lo, hi);
    }
  }
}

void SolverConfig::validate() const {
  if (!(grad_tol > 0.0)) throw ValidationError("grad_tol must be positive");
  if (max_iter < 1) throw ValidationError("max_iter must be at least 1");
  if (!(initial_step > 0.0)) throw ValidationError("initial_step must be positive");
  if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0)) {
    throw ValidationError("backtrack_factor must lie in (0, 1)");
  }
  if (!(sufficient_decrease > 0.0 && sufficient_decrease < 1.0)) {
    throw ValidationError("sufficient_decrease must lie in (0, 1)");
  }
  if (!(divergence_guard > 0.0)) throw ValidationError("divergence_guard must be positive");
  if (lbfgs_memory < 1) throw ValidationError("lbfgs_memory must be at least 1");
}

const char* to_string(SolverStatus status) {
  switch (status) {
    case SolverStatus::converged: return "converged";
    case SolverStatus::max_iter_exceeded: return "max_iter_exceeded";
    case SolverStatus::diverged: return "diverged";
    case SolverStatus::stalled: return "stalled";
  }
  return "unknown";
}

double dual_value(const Weights& weights, const TargetExpectations& target,
                  const FeatureTable& features) {
  check_dims(weights, target, features);
  double value = log_partition(weights, features);
  for (std::size_t k = 0; k < weights.size(); ++k) value -= weights[k] * target[k];
  return value;
}

Vector dual_gradient(const Weights& weights, const TargetExpectations& target,
                     const FeatureTable& features) {
  check_dims(weights, target, features);
  Vector g = feature_expectation(log_linear_distribution(weights, features), features);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] -= target[k];
  return g;
}

SolverResult minimize_dual(const TargetExpectations& target, const FeatureTable& features,
                           const Weights& init, const SolverConfig& config) {
  config.validate();
  check_dims(init, target, features);
  check_feasible(target, features);

  const std::size_t dim = features.num_features();
  Vector lambda = init.values();
  Evaluation current = evaluate(lambda, target, features);

  SolverResult result;
  result.dual_history.push_back(current.value);
  std::deque<Vector> s_hist, y_hist;
  const bool use_lbfgs = config.method == DescentMethod::lbfgs;
  bool steepest_retry = false;

  auto finish = [&](SolverStatus status, std::string diagnostic) {
    result.weights = Weights(lambda);
    result.dual_value = current.value;
    result.grad_norm = current.grad_norm;
    result.status = status;
    result.converged = status == SolverStatus::converged;
    result.diagnostic = std::move(diagnostic);
    return result;
  };

  for (int iter = 0;; ++iter) {
    result.iterations = iter;
    if (current.grad_norm <= config.grad_tol) return finish(SolverStatus::converged, "");
    if (iter >= config.max_iter) {
      return finish(SolverStatus::max_iter_exceeded,
                    "gradient sup-norm " + log::format_number(current.grad_norm) + " after " +
                        std::to_string(iter) + " iterations");
    }

    Vector direction;
    if (config.method == DescentMethod::newton && !steepest_retry) {
      direction = newton_direction(current, features);
      if (!direction.empty() && !(dot(direction, current.gradient) < 0.0)) direction.clear();
    } else if (use_lbfgs && !s_hist.empty()) {
      direction = lbfgs_direction(current.gradient, s_hist, y_hist);
      if (!(dot(direction, current.gradient) < 0.0)) {
        s_hist.clear();
        y_hist.clear();
        direction.clear();
      }
    }
    if (direction.empty()) {
      direction = current.gradient;
      for (double& v : direction) v = -v;
    }

    // Backtracking under the sufficient-decrease condition. A trial that does
    // not raise the dual value but lowers the gradient norm is also accepted.
    const double slope = dot(direction, current.gradient);
    double step = config.initial_step;
    Vector trial(dim);
    Evaluation next;
    double change = 0.0;
    bool accepted = false;
    while (step > 1e-20) {
      for (std::size_t k = 0; k < dim; ++k) trial[k] = lambda[k] + step * direction[k];
      next = evaluate(trial, target, features);
      if (std::isfinite(next.value)) {
        change = dual_change(current, next, direction, step, target, features);
        const bool armijo = change <= config.sufficient_decrease * step * slope;
        const bool flat = change <= 0.0 && next.grad_norm < current.grad_norm;
        if (armijo || flat) {
          accepted = true;
          break;
        }
      }
      step *= config.backtrack_factor;
    }

    if (!accepted) {
      const bool curved = config.method == DescentMethod::newton || !s_hist.empty();
      if (curved && !steepest_retry) {
        // Retry once along steepest descent before giving up.
        s_hist.clear();
        y_hist.clear();
        steepest_retry = true;
        --iter;
        continue;
      }
      return finish(SolverStatus::stalled,
                    "line search found no acceptable step at gradient sup-norm " +
                        log::format_number(current.grad_norm));
    }

    if (use_lbfgs) {
      Vector s(dim), y(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        s[k] = trial[k] - lambda[k];
        y[k] = next.gradient[k] - current.gradient[k];
      }
      if (dot(s, y) > 1e-300) {
        s_hist.push_back(std::move(s));
        y_hist.push_back(std::move(y));
        if (s_hist.size() > static_cast<std::size_t>(config.lbfgs_memory)) {
          s_hist.pop_front();
          y_hist.pop_front();
        }
      }
    }

    steepest_retry = false;
    lambda = trial;
    // The level is carried forward by the accurate change so the recorded
    // history is free of rounding jitter in the absolute value.
    const double level = current.value + change;
    current = std::move(next);
    current.value = level;
    result.dual_history.push_back(current.value);

    if (sup_norm(lambda) > config.divergence_guard) {
      result.iterations = iter + 1;
      return finish(SolverStatus::diverged,
                    "some |lambda_k| exceeded the divergence guard " +
                        log::format_number(config.divergence_guard) +
                        "; the target is likely on the boundary of the feature polytope");
    }
  }
}

}  // namespace umaxent

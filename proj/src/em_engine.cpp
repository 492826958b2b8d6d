#include "umaxent/em_engine.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "umaxent/log.hpp"
#include "umaxent/random.hpp"

namespace umaxent {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Vector log_probs(const Distribution& model) {
  Vector out(model.size());
  for (std::size_t x = 0; x < out.size(); ++x) {
    out[x] = model[x] > 0.0 ? std::log(model[x]) : kNegInf;
  }
  return out;
}

LogLikelihood channel_log_likelihood(const UMaxEntProblem& problem, const Vector& log_model) {
  const auto& channel = problem.channel();
  const auto& empirical = problem.empirical();
  LogLikelihood out;
  Vector terms;
  for (std::size_t w = 0; w < channel.num_observations(); ++w) {
    const double weight = empirical[w];
    if (weight <= 0.0) continue;
    auto row = channel.matrix().row(w);
    terms.clear();
    double shift = kNegInf;
    for (std::size_t x = 0; x < row.size(); ++x) {
      if (row[x] > 0.0 && log_model[x] > kNegInf) {
        terms.push_back(std::log(row[x]) + log_model[x]);
        shift = std::max(shift, terms.back());
      }
    }
    if (terms.empty()) {
      out.value = kNegInf;
      out.finite = false;
      return out;
    }
    double total = 0.0;
    for (double t : terms) total += std::exp(t - shift);
    out.value += weight * (shift + std::log(total));
  }
  return out;
}

double q_value(const Weights& lambda, const FeatureTable& features,
               const TargetExpectations& phi_hat) {
  double q = -log_partition(lambda, features);
  for (std::size_t k = 0; k < lambda.size(); ++k) q += lambda[k] * phi_hat[k];
  return q;
}

Weights initial_weights(const EmConfig& config, std::size_t k, int start) {
  const bool random = config.init == InitMode::random || start > 0;
  if (!random) return Weights::zeros(k);
  Rng rng(config.seed + static_cast<std::uint64_t>(start));
  Vector lambda(k);
  for (double& v : lambda) v = rng.uniform(-config.random_scale, config.random_scale);
  return Weights(std::move(lambda));
}

EmResult run_em(const EStep& estep, const EmConfig& config, int start) {
  const FeatureTable& features = estep.features();
  const std::size_t k = features.num_features();
  const bool use_prior = config.init == InitMode::prior && start == 0;

  Weights lambda = initial_weights(config, k, start);
  Distribution model = log_linear_distribution(lambda, features);
  const Distribution& first_model = use_prior ? *config.prior : model;

  EmResult result;
  EStepTerms pending = estep.terms(first_model);
  {
    EmRecord rec;
    rec.iteration = 0;
    rec.lambda = lambda.values();
    rec.phi_hat = pending.phi_hat.values();
    rec.loglik = estep.log_likelihood(first_model).value;
    if (!use_prior) {
      Decomposition d{pending.u_star, q_value(lambda, features, pending.phi_hat), pending.h};
      rec.q = d.q;
      rec.h = d.h;
      rec.u_star = d.u_star;
      rec.residual = sup_norm_diff(feature_expectation(model, features), pending.phi_hat.values());
    } else {
      rec.u_star = pending.u_star;
      rec.h = pending.h;
      rec.q = rec.loglik - pending.u_star - pending.h;
      rec.residual = sup_norm_diff(feature_expectation(*config.prior, features),
                                   pending.phi_hat.values());
    }
    result.trace.records.push_back(std::move(rec));
  }

  std::size_t best = 0;
  for (int t = 1; t <= config.max_em_iter; ++t) {
    SolverResult m_step;
    try {
      m_step = minimize_dual(pending.phi_hat, features, lambda, config.inner);
    } catch (const Error& e) {
      throw IterationError(t, e.what());
    }
    if (m_step.status == SolverStatus::diverged) throw IterationError(t, m_step.diagnostic);
    if (!m_step.converged) {
      log::warn("M-step at EM iteration " + std::to_string(t) + " did not converge (" +
                to_string(m_step.status) + "): " + m_step.diagnostic);
    }

    const Weights previous = lambda;
    const EStepTerms used = std::move(pending);
    lambda = m_step.weights;
    model = log_linear_distribution(lambda, features);
    pending = estep.terms(model);

    EmRecord rec;
    rec.iteration = t;
    rec.lambda = lambda.values();
    rec.phi_hat = used.phi_hat.values();
    rec.loglik = estep.log_likelihood(model).value;
    rec.u_star = used.u_star;
    rec.h = used.h;
    rec.q = q_value(lambda, features, used.phi_hat);
    rec.residual = sup_norm_diff(feature_expectation(model, features), pending.phi_hat.values());
    rec.inner_iterations = m_step.iterations;

    const double lambda_change = sup_norm_diff(lambda.values(), previous.values());
    const double loglik_change =
        std::abs(rec.loglik - result.trace.records.back().loglik);
    const bool first_after_prior = use_prior && t == 1;
    result.trace.records.push_back(rec);
    if (rec.loglik >= result.trace.records[best].loglik || best == 0) best = result.trace.size() - 1;

    std::string reason;
    if (lambda_change <= config.lambda_tol) {
      reason = "lambda";
    } else if (!first_after_prior && std::isfinite(rec.loglik) &&
               loglik_change <= config.likelihood_tol &&
               rec.residual <= config.lambda_tol) {
      reason = "likelihood";
    }
    if (!reason.empty()) {
      result.weights = lambda;
      result.status = EmStatus::converged;
      result.converged = true;
      result.stop_reason = reason;
      result.iterations = t;
      result.loglik = rec.loglik;
      result.residual = rec.residual;
      return result;
    }
  }

  const EmRecord& chosen = result.trace.records[best];
  result.weights = Weights(chosen.lambda);
  result.status = EmStatus::max_iter_exceeded;
  result.converged = false;
  result.iterations = config.max_em_iter;
  result.loglik = chosen.loglik;
  result.residual = chosen.residual;
  log::warn("EM stopped after " + std::to_string(config.max_em_iter) +
            " iterations without converging; returning the highest-likelihood iterate");
  return result;
}

}  // namespace

UMaxEntProblem::UMaxEntProblem(ElementSpace space, FeatureTable features,
                               ObservationChannel channel, EmpiricalObservations empirical)
    : space_(std::move(space)),
      features_(std::move(features)),
      channel_(std::move(channel)),
      empirical_(std::move(empirical)) {
  if (features_.num_elements() != space_.size()) {
    throw DimensionMismatch("feature columns (|X|)", space_.size(), features_.num_elements());
  }
  if (channel_.num_elements() != space_.size()) {
    throw DimensionMismatch("channel columns (|X|)", space_.size(), channel_.num_elements());
  }
  if (empirical_.size() != channel_.num_observations()) {
    throw DimensionMismatch("empirical observations (|Omega|)", channel_.num_observations(),
                            empirical_.size());
  }
}

void EmConfig::validate() const {
  if (!(lambda_tol > 0.0)) throw ValidationError("lambda_tol must be positive");
  if (!(likelihood_tol > 0.0)) throw ValidationError("likelihood_tol must be positive");
  if (max_em_iter < 1) throw ValidationError("max_em_iter must be at least 1");
  if (!(random_scale >= 0.0)) throw ValidationError("random_scale must be nonnegative");
  if (restarts < 1) throw ValidationError("restarts must be at least 1");
  if (init == InitMode::prior && !prior) {
    throw ValidationError("init mode 'prior' needs a prior distribution");
  }
  inner.validate();
}

void EmTrace::write_csv(std::ostream& out) const {
  const std::size_t k = records.empty() ? 0 : records.front().lambda.size();
  out << "iter,loglik,Q,H,U_star,residual";
  for (std::size_t i = 0; i < k; ++i) out << ",lambda_" << i;
  out << '\n';
  for (const auto& rec : records) {
    out << rec.iteration << ',' << format_real(rec.loglik) << ',' << format_real(rec.q) << ','
        << format_real(rec.h) << ',' << format_real(rec.u_star) << ','
        << format_real(rec.residual);
    for (double l : rec.lambda) out << ',' << format_real(l);
    out << '\n';
  }
}

EStepTerms ObservationEStep::terms(const Distribution& model) const {
  const auto& channel = problem_.channel();
  const auto& empirical = problem_.empirical();
  const auto& features = problem_.features();
  const std::size_t n = model.size();
  if (n != channel.num_elements()) {
    throw DimensionMismatch("elements (|X|)", channel.num_elements(), n);
  }

  Vector phi_hat(features.num_features(), 0.0);
  double u_star = 0.0;
  double h = 0.0;
  double kept = 0.0;
  Vector joint(n);
  for (std::size_t w = 0; w < channel.num_observations(); ++w) {
    const double weight = empirical[w];
    if (weight <= 0.0) continue;
    auto row = channel.matrix().row(w);
    double marginal = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      joint[x] = row[x] * model[x];
      marginal += joint[x];
    }
    if (!(marginal > 0.0)) {
      if (policy_ == ZeroMarginalPolicy::error) throw ZeroMarginal(w);
      log::warn("skipping observation " + std::to_string(w) +
                " with empirical mass but zero model marginal");
      continue;
    }
    kept += weight;
    for (std::size_t x = 0; x < n; ++x) {
      const double post = joint[x] / marginal;
      if (post <= 0.0) continue;
      for (std::size_t k = 0; k < phi_hat.size(); ++k) phi_hat[k] += weight * post * features(k, x);
      u_star += weight * post * std::log(row[x]);
      h -= weight * post * std::log(post);
    }
  }
  if (!(kept > 0.0)) throw ZeroMarginal(0, "every observation (all skipped)");
  if (kept != 1.0) {
    for (double& v : phi_hat) v /= kept;
    u_star /= kept;
    h /= kept;
  }
  return {TargetExpectations(std::move(phi_hat)), u_star, h};
}

LogLikelihood ObservationEStep::log_likelihood(const Distribution& model) const {
  return channel_log_likelihood(problem_, log_probs(model));
}

TargetExpectations e_step(const UMaxEntProblem& problem, const Weights& current,
                          ZeroMarginalPolicy policy) {
  Distribution model = log_linear_distribution(current, problem.features());
  return ObservationEStep(problem, policy).terms(model).phi_hat;
}

LogLikelihood log_likelihood(const UMaxEntProblem& problem, const Weights& weights) {
  Vector log_model = scores(weights, problem.features());
  const double log_z = log_partition(weights, problem.features());
  for (double& v : log_model) v -= log_z;
  return channel_log_likelihood(problem, log_model);
}

Decomposition likelihood_decomposition(const UMaxEntProblem& problem, const Weights& lambda,
                                       const Weights& lambda_prev, ZeroMarginalPolicy policy) {
  Distribution prev_model = log_linear_distribution(lambda_prev, problem.features());
  EStepTerms terms = ObservationEStep(problem, policy).terms(prev_model);
  return {terms.u_star, q_value(lambda, problem.features(), terms.phi_hat), terms.h};
}

double constraint_residual(const UMaxEntProblem& problem, const Weights& weights,
                           ZeroMarginalPolicy policy) {
  Distribution model = log_linear_distribution(weights, problem.features());
  Vector lhs = feature_expectation(model, problem.features());
  TargetExpectations rhs = ObservationEStep(problem, policy).terms(model).phi_hat;
  return sup_norm_diff(lhs, rhs.values());
}

EmResult em_solve(const EStep& estep, const EmConfig& config) {
  config.validate();
  if (config.prior && config.prior->size() != estep.features().num_elements()) {
    throw DimensionMismatch("prior distribution (|X|)", estep.features().num_elements(),
                            config.prior->size());
  }
  EmResult best = run_em(estep, config, 0);
  for (int start = 1; start < config.restarts; ++start) {
    EmResult candidate = run_em(estep, config, start);
    if (candidate.loglik > best.loglik) best = std::move(candidate);
  }
  return best;
}

EmResult em_solve(const UMaxEntProblem& problem, const EmConfig& config) {
  ObservationEStep estep(problem, config.zero_marginal);
  return em_solve(estep, config);
}

}  // namespace umaxent

#include "umaxent/specializations.hpp"

#include <cmath>
#include <algorithm>

#include "umaxent/random.hpp"

namespace umaxent {
namespace {

constexpr double kPointMassTolerance = 1e-12;

std::size_t support_element(const ObservationChannel& channel, std::size_t omega) {
  auto row = channel.matrix().row(omega);
  for (std::size_t x = 0; x < row.size(); ++x) {
    if (row[x] > 0.0) return x;
  }
  return row.size();
}

}  // namespace

bool has_disjoint_supports(const ObservationChannel& channel) {
  for (std::size_t w = 0; w < channel.num_observations(); ++w) {
    int support = 0;
    for (double p : channel.matrix().row(w)) support += p > 0.0 ? 1 : 0;
    if (support > 1) return false;
  }
  return true;
}

ChannelDeterminism is_deterministic_channel(const ObservationChannel& channel,
                                            const Distribution& model) {
  ChannelDeterminism out;
  out.for_all_models = has_disjoint_supports(channel);
  out.under_model = true;
  for (std::size_t w = 0; w < channel.num_observations() && out.under_model; ++w) {
    auto post = try_posterior(model, channel, w);
    if (!post) continue;
    for (double p : *post) {
      if (std::abs(p) > kPointMassTolerance && std::abs(p - 1.0) > kPointMassTolerance) {
        out.under_model = false;
        break;
      }
    }
  }
  return out;
}

Distribution induced_element_distribution(const UMaxEntProblem& problem) {
  const auto& channel = problem.channel();
  if (!has_disjoint_supports(channel)) {
    throw PreconditionViolated("channel is not deterministic: some observation row "
                               "is supported on more than one element");
  }
  Vector probs(channel.num_elements(), 0.0);
  for (std::size_t w = 0; w < channel.num_observations(); ++w) {
    const double weight = problem.empirical()[w];
    if (weight <= 0.0) continue;
    const std::size_t x = support_element(channel, w);
    if (x == channel.num_elements()) throw ZeroMarginal(w);
    probs[x] += weight;
  }
  return Distribution(std::move(probs));
}

SolverResult solve_standard_maxent(const Distribution& empirical_x, const FeatureTable& features,
                                   const SolverConfig& config) {
  TargetExpectations target(feature_expectation(empirical_x, features));
  return minimize_dual(target, features, Weights::zeros(features.num_features()), config);
}

Vector dropped_gradient_term(const UMaxEntProblem& problem, const Weights& weights) {
  const auto& channel = problem.channel();
  const auto& features = problem.features();
  const Distribution model = log_linear_distribution(weights, features);
  const Distribution marginal = observation_marginal(model, channel);
  const Vector s = scores(weights, features);

  Vector out(model.size(), 0.0);
  for (std::size_t x = 0; x < model.size(); ++x) {
    double total = 0.0;
    for (std::size_t w = 0; w < channel.num_observations(); ++w) {
      const double weight = problem.empirical()[w];
      const double pw = marginal[w];
      const double c = channel(w, x);
      if (weight <= 0.0 || pw <= 0.0 || c == 0.0) continue;
      total += weight * (c * pw - c * c * model[x]) / (pw * pw);
    }
    out[x] = s[x] * total;
  }
  return out;
}

ReductionReport verify_maxent_reduction(const UMaxEntProblem& problem, const EmConfig& config) {
  const Distribution induced = induced_element_distribution(problem);
  const EmResult em = em_solve(problem, config);
  const SolverResult standard = solve_standard_maxent(induced, problem.features(), config.inner);

  ReductionReport report;
  report.reduction = "standard";
  report.tv_distance = total_variation(log_linear_distribution(em.weights, problem.features()),
                                       log_linear_distribution(standard.weights, problem.features()));
  report.residual = constraint_residual(problem, em.weights, config.zero_marginal);
  report.dropped_term_norm = sup_norm(dropped_gradient_term(problem, em.weights));
  report.iterations = em.iterations;
  report.converged = em.converged && standard.converged;
  return report;
}

LatentFactorization::LatentFactorization(std::vector<std::string> y_labels,
                                         std::vector<std::string> z_labels,
                                         std::vector<std::pair<std::size_t, std::size_t>> pairs)
    : y_labels_(std::move(y_labels)), z_labels_(std::move(z_labels)), pairs_(std::move(pairs)) {
  if (y_labels_.empty() || z_labels_.empty()) {
    throw ValidationError("latent factorization needs non-empty Y and Z label sets");
  }
  if (pairs_.empty()) throw ValidationError("latent factorization covers no elements");
  table_.assign(num_y() * num_z(), -1);
  completions_.assign(num_y(), {});
  for (std::size_t x = 0; x < pairs_.size(); ++x) {
    const auto [y, z] = pairs_[x];
    if (y >= num_y() || z >= num_z()) {
      throw ValidationError("element " + std::to_string(x) + " maps outside the Y x Z grid");
    }
    long& slot = table_[y * num_z() + z];
    if (slot != -1) {
      throw ValidationError("elements " + std::to_string(slot) + " and " + std::to_string(x) +
                            " share the same (Y, Z) pair");
    }
    slot = static_cast<long>(x);
    completions_[y].push_back(z);
  }
  for (auto& c : completions_) std::sort(c.begin(), c.end());
}

LatentFactorization LatentFactorization::grid(std::size_t num_y, std::size_t num_z) {
  std::vector<std::string> ys, zs;
  for (std::size_t y = 0; y < num_y; ++y) ys.push_back("y" + std::to_string(y));
  for (std::size_t z = 0; z < num_z; ++z) zs.push_back("z" + std::to_string(z));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t y = 0; y < num_y; ++y) {
    for (std::size_t z = 0; z < num_z; ++z) pairs.emplace_back(y, z);
  }
  return LatentFactorization(std::move(ys), std::move(zs), std::move(pairs));
}

std::optional<std::size_t> LatentFactorization::embed(std::size_t y, std::size_t z) const {
  if (y >= num_y() || z >= num_z()) return std::nullopt;
  const long slot = table_[y * num_z() + z];
  if (slot < 0) return std::nullopt;
  return static_cast<std::size_t>(slot);
}

ObservationChannel LatentFactorization::y_channel() const {
  Matrix m(num_y(), num_elements());
  for (std::size_t x = 0; x < num_elements(); ++x) m(y_of(x), x) = 1.0;
  return ObservationChannel(std::move(m), y_labels_);
}

Vector latent_constraint_rhs(const LatentFactorization& fact, const Distribution& empirical_y,
                             const Distribution& model, const FeatureTable& features) {
  if (empirical_y.size() != fact.num_y()) {
    throw DimensionMismatch("empirical Y distribution", fact.num_y(), empirical_y.size());
  }
  if (model.size() != fact.num_elements()) {
    throw DimensionMismatch("model (|X|)", fact.num_elements(), model.size());
  }
  if (features.num_elements() != fact.num_elements()) {
    throw DimensionMismatch("feature columns (|X|)", fact.num_elements(),
                            features.num_elements());
  }
  Vector out(features.num_features(), 0.0);
  for (std::size_t y = 0; y < fact.num_y(); ++y) {
    if (empirical_y[y] <= 0.0) continue;
    double mass = 0.0;
    for (std::size_t z : fact.completions(y)) mass += model[*fact.embed(y, z)];
    if (!(mass > 0.0)) throw ZeroMarginal(y, "observed component Y");
    for (std::size_t z : fact.completions(y)) {
      const std::size_t x = *fact.embed(y, z);
      const double weight = empirical_y[y] * (model[x] / mass);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += weight * features(k, x);
    }
  }
  return out;
}

ReductionReport verify_latent_reduction(const LatentFactorization& fact,
                                        const Distribution& empirical_y,
                                        const FeatureTable& features, const EmConfig& config,
                                        const LatentCheckOptions& options) {
  UMaxEntProblem problem(ElementSpace::indexed(fact.num_elements()), features, fact.y_channel(),
                         EmpiricalObservations::exact(empirical_y));

  Rng rng(options.seed);
  double worst = 0.0;
  for (int i = 0; i < options.num_models; ++i) {
    Vector lambda(features.num_features());
    for (double& v : lambda) v = rng.uniform(-options.weight_scale, options.weight_scale);
    Weights w(std::move(lambda));
    const Vector via_channel = e_step(problem, w, config.zero_marginal).values();
    const Vector direct =
        latent_constraint_rhs(fact, empirical_y, log_linear_distribution(w, features), features);
    worst = std::max(worst, sup_norm_diff(via_channel, direct));
  }

  const EmResult em = em_solve(problem, config);
  ReductionReport report;
  report.reduction = "latent";
  report.identity_max_error = worst;
  report.residual = constraint_residual(problem, em.weights, config.zero_marginal);
  report.dropped_term_norm = sup_norm(dropped_gradient_term(problem, em.weights));
  report.iterations = em.iterations;
  report.converged = em.converged;
  if (has_disjoint_supports(problem.channel())) {
    const SolverResult standard =
        solve_standard_maxent(induced_element_distribution(problem), features, config.inner);
    report.tv_distance = total_variation(log_linear_distribution(em.weights, features),
                                         log_linear_distribution(standard.weights, features));
    report.converged = report.converged && standard.converged;
  }
  return report;
}

}  // namespace umaxent

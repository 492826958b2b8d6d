#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "umaxent/log.hpp"
#include "umaxent/specializations.hpp"

using namespace umaxent;
using doctest::Approx;

namespace {

struct QuietLog {
  QuietLog() { log::set_warning_sink({}); }
  ~QuietLog() { log::reset_warning_sink(); }
};

// Extra gradient term evaluated straight from its defining sum.
Vector naive_dropped_term(const UMaxEntProblem& p, const Vector& lambda) {
  const Vector model = testing::naive_model(lambda, p.features());
  const auto& c = p.channel();
  const Vector& emp = p.empirical().dist().probs();
  Vector out(model.size(), 0.0);
  for (std::size_t x = 0; x < model.size(); ++x) {
    for (std::size_t w = 0; w < c.num_observations(); ++w) {
      double pw = 0.0;
      for (std::size_t y = 0; y < model.size(); ++y) pw += c(w, y) * model[y];
      const double bracket = (c(w, x) * pw - c(w, x) * c(w, x) * model[x]) / (pw * pw);
      for (std::size_t k = 0; k < lambda.size(); ++k) {
        out[x] += lambda[k] * emp[w] * p.features()(k, x) * bracket;
      }
    }
  }
  return out;
}

// Latent right-hand side by enumerating (Y, Z) pairs of the grid.
Vector naive_latent_rhs(const LatentFactorization& fact, const Vector& emp_y, const Vector& model,
                        const FeatureTable& f) {
  Vector out(f.num_features(), 0.0);
  for (std::size_t y = 0; y < fact.num_y(); ++y) {
    double mass = 0.0;
    for (std::size_t z = 0; z < fact.num_z(); ++z) {
      if (auto x = fact.embed(y, z)) mass += model[*x];
    }
    for (std::size_t z = 0; z < fact.num_z(); ++z) {
      const auto x = fact.embed(y, z);
      if (!x) continue;
      for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] += emp_y[y] * model[*x] / mass * f(k, *x);
      }
    }
  }
  return out;
}

// Random subset of a |Y| x |Z| grid in which every Y keeps at least one Z,
// listed in shuffled element order.
LatentFactorization random_factorization(Rng& rng, std::size_t ny, std::size_t nz) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t y = 0; y < ny; ++y) {
    const std::size_t keep = rng.next() % nz;
    for (std::size_t z = 0; z < nz; ++z) {
      if (z == keep || rng.uniform() < 0.6) pairs.emplace_back(y, z);
    }
  }
  for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.next() % i]);
  std::vector<std::string> ys, zs;
  for (std::size_t y = 0; y < ny; ++y) ys.push_back("y" + std::to_string(y));
  for (std::size_t z = 0; z < nz; ++z) zs.push_back("z" + std::to_string(z));
  return LatentFactorization(ys, zs, pairs);
}

UMaxEntProblem deterministic_problem(Rng& rng, std::size_t n, std::size_t m, std::size_t k) {
  return UMaxEntProblem(ElementSpace::indexed(n), testing::random_features(rng, k, n),
                        testing::random_deterministic_channel(rng, m, n),
                        EmpiricalObservations::exact(testing::random_distribution(rng, m)));
}

}  // namespace

TEST_CASE("channel determinism examples") {
  const auto uniform3 = Distribution::uniform(3);
  const auto id = is_deterministic_channel(ObservationChannel::identity(3), uniform3);
  CHECK(id.under_model);
  CHECK(id.for_all_models);

  const auto flat = is_deterministic_channel(ObservationChannel::uninformative(2, 3), uniform3);
  CHECK_FALSE(flat.under_model);
  CHECK_FALSE(flat.for_all_models);

  // More observations than elements, each observation owned by one element.
  const auto wide = ObservationChannel::from_rows({{0.5, 0}, {0.5, 0}, {0, 1}});
  const auto r = is_deterministic_channel(wide, Distribution({0.3, 0.7}));
  CHECK(r.under_model);
  CHECK(r.for_all_models);
  CHECK(has_disjoint_supports(wide));

  // A dense channel looks deterministic under a point-mass model only.
  const auto dense = ObservationChannel::from_rows({{0.9, 0.2}, {0.1, 0.8}});
  const auto pm = is_deterministic_channel(dense, Distribution::point_mass(2, 0));
  CHECK(pm.under_model);
  CHECK_FALSE(pm.for_all_models);
  CHECK_FALSE(has_disjoint_supports(dense));
}

TEST_CASE("solve_standard_maxent examples") {
  const auto u = solve_standard_maxent(Distribution::uniform(3), FeatureTable::from_rows({{1, 1, 1}}));
  CHECK(u.converged);
  const auto pu = log_linear_distribution(u.weights, FeatureTable::from_rows({{1, 1, 1}}));
  for (double v : pu) CHECK(v == Approx(1.0 / 3.0).epsilon(1e-12));

  const auto bern = FeatureTable::from_rows({{1, 0}});
  const auto r = solve_standard_maxent(Distribution({2.0 / 3.0, 1.0 / 3.0}), bern);
  const auto p = log_linear_distribution(r.weights, bern);
  CHECK(std::abs(p[0] - 2.0 / 3.0) <= 1e-8);
  CHECK(r.weights[0] == Approx(std::log(2.0)).epsilon(1e-8));
}

TEST_CASE("solve_standard_maxent beats sampled feasible distributions") {
  // |X| = 4, K = 2: the feasible set is a segment p* + t d, d spanning the
  // null space of the ones row and both features.
  Rng rng(21);
  const auto f = testing::random_features(rng, 2, 4);
  const auto emp = testing::random_distribution(rng, 4);
  const auto r = solve_standard_maxent(emp, f);
  REQUIRE(r.converged);
  const auto star = log_linear_distribution(r.weights, f);

  // Null vector by the generalized cross product of three rows in R^4.
  const double a[3][4] = {{1, 1, 1, 1},
                          {f(0, 0), f(0, 1), f(0, 2), f(0, 3)},
                          {f(1, 0), f(1, 1), f(1, 2), f(1, 3)}};
  double d[4];
  for (int i = 0; i < 4; ++i) {
    int cols[3], c = 0;
    for (int j = 0; j < 4; ++j) {
      if (j != i) cols[c++] = j;
    }
    const double det = a[0][cols[0]] * (a[1][cols[1]] * a[2][cols[2]] - a[1][cols[2]] * a[2][cols[1]]) -
                       a[0][cols[1]] * (a[1][cols[0]] * a[2][cols[2]] - a[1][cols[2]] * a[2][cols[0]]) +
                       a[0][cols[2]] * (a[1][cols[0]] * a[2][cols[1]] - a[1][cols[1]] * a[2][cols[0]]);
    d[i] = (i % 2 == 0 ? 1.0 : -1.0) * det;
  }
  double lo = -INFINITY, hi = INFINITY;
  for (int x = 0; x < 4; ++x) {
    if (d[x] > 0) lo = std::max(lo, -star[x] / d[x]);
    if (d[x] < 0) hi = std::min(hi, -star[x] / d[x]);
  }
  REQUIRE(lo < hi);
  const double h_star = entropy(star);
  int accepted = 0;
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.uniform(lo, hi);
    Vector q(4);
    for (int x = 0; x < 4; ++x) q[x] = std::max(0.0, star[x] + t * d[x]);
    const auto dq = Distribution::normalize(q);
    const auto eq = feature_expectation(dq, f);
    const auto es = feature_expectation(emp, f);
    if (std::abs(eq[0] - es[0]) > 1e-9 || std::abs(eq[1] - es[1]) > 1e-9) continue;
    ++accepted;
    CHECK(entropy(dq) <= h_star + 1e-12);
  }
  CHECK(accepted > 900);
}

TEST_CASE("induced element distribution merges observations") {
  const UMaxEntProblem p(ElementSpace::indexed(2), FeatureTable::from_rows({{1, 0}}),
                         ObservationChannel::from_rows({{0.5, 0}, {0.5, 0}, {0, 0.3}, {0, 0.7}}),
                         EmpiricalObservations::exact(Distribution({0.1, 0.2, 0.3, 0.4})));
  const auto d = induced_element_distribution(p);
  CHECK(d[0] == Approx(0.3).epsilon(1e-15));
  CHECK(d[1] == Approx(0.7).epsilon(1e-15));

  const UMaxEntProblem dense(ElementSpace::indexed(2), FeatureTable::from_rows({{1, 0}}),
                             ObservationChannel::from_rows({{0.9, 0.2}, {0.1, 0.8}}),
                             EmpiricalObservations::exact(Distribution({0.5, 0.5})));
  CHECK_THROWS_AS(induced_element_distribution(dense), PreconditionViolated);
}

TEST_CASE("verify_maxent_reduction examples") {
  Rng rng(22);
  const UMaxEntProblem id(ElementSpace::indexed(3), testing::random_features(rng, 2, 3),
                          ObservationChannel::identity(3),
                          EmpiricalObservations::exact(testing::random_distribution(rng, 3)));
  const auto r = verify_maxent_reduction(id);
  CHECK(r.reduction == "standard");
  REQUIRE(r.tv_distance.has_value());
  CHECK(*r.tv_distance <= 1e-6);
  CHECK(r.dropped_term_norm <= 1e-10);
  CHECK(r.converged);

  const UMaxEntProblem merged(ElementSpace::indexed(2), FeatureTable::from_rows({{1, 0}}),
                              ObservationChannel::from_rows({{0.5, 0}, {0.5, 0}, {0, 0.3}, {0, 0.7}}),
                              EmpiricalObservations::exact(Distribution({0.1, 0.2, 0.3, 0.4})));
  const auto m = verify_maxent_reduction(merged);
  CHECK(*m.tv_distance <= 1e-6);
  CHECK(m.dropped_term_norm <= 1e-10);
  // The merged problem is Bernoulli with Pr~(X = 0) = 0.3.
  const auto model = log_linear_distribution(solve_standard_maxent(Distribution({0.3, 0.7}),
                                                                   merged.features())
                                                 .weights,
                                             merged.features());
  CHECK(std::abs(model[0] - 0.3) <= 1e-8);

  const UMaxEntProblem dense(ElementSpace::indexed(2), FeatureTable::from_rows({{1, 0}}),
                             ObservationChannel::from_rows({{0.9, 0.2}, {0.1, 0.8}}),
                             EmpiricalObservations::exact(Distribution({0.5, 0.5})));
  CHECK_THROWS_AS(verify_maxent_reduction(dense), PreconditionViolated);
}

TEST_CASE("deterministic channels agree with standard MaxEnt within two EM iterations") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.next() % 6, k = 1 + rng.next() % 3;
    const auto p = deterministic_problem(rng, n, n + rng.next() % 4, k);
    EmConfig config;
    config.max_em_iter = 2;
    QuietLog quiet;
    const auto em = em_solve(p, config);
    const auto st = solve_standard_maxent(induced_element_distribution(p), p.features());
    CHECK(total_variation(log_linear_distribution(em.weights, p.features()),
                          log_linear_distribution(st.weights, p.features())) <= 1e-6);
  }
}

TEST_CASE("dropped gradient term vanishes for deterministic channels only") {
  Rng rng(24);
  const auto det = deterministic_problem(rng, 5, 8, 3);
  for (int i = 0; i < 100; ++i) {
    const auto w = testing::random_weights(rng, 3, 2.0);
    CHECK(sup_norm(dropped_gradient_term(det, w)) <= 1e-10);
  }
  const auto dense = testing::random_problem(rng, 4, 5, 2);
  double largest = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto w = testing::random_weights(rng, 2, 2.0);
    const auto got = dropped_gradient_term(dense, w);
    const auto want = naive_dropped_term(dense, w.values());
    CHECK(sup_norm_diff(got, want) <= 1e-12);
    largest = std::max(largest, sup_norm(got));
  }
  CHECK(largest > 1e-3);
}

TEST_CASE("latent factorization bookkeeping") {
  const auto g = LatentFactorization::grid(2, 3);
  CHECK(g.num_elements() == 6);
  CHECK(g.embed(1, 2) == std::optional<std::size_t>(5));
  CHECK(g.y_of(4) == 1);
  CHECK(g.z_of(4) == 1);
  const auto c = g.y_channel();
  CHECK(c.num_observations() == 2);
  CHECK(c(1, 4) == 1.0);
  CHECK(c(0, 4) == 0.0);

  const LatentFactorization sparse({"a", "b"}, {"p", "q"}, {{1, 1}, {0, 0}, {1, 0}});
  CHECK(sparse.completions(1) == std::vector<std::size_t>{0, 1});
  CHECK_FALSE(sparse.embed(0, 1).has_value());
  CHECK_THROWS_AS(LatentFactorization({"a"}, {"p"}, {{0, 0}, {0, 0}}), ValidationError);
  CHECK_THROWS_AS(LatentFactorization({"a"}, {"p"}, {{0, 1}}), ValidationError);
}

TEST_CASE("latent_constraint_rhs examples") {
  Rng rng(25);
  const auto f = testing::random_features(rng, 2, 3);
  const auto model = testing::random_distribution(rng, 3);

  // No hidden part: the empirical expectation itself.
  const auto flat = LatentFactorization::grid(3, 1);
  const Distribution emp({0.2, 0.3, 0.5});
  const auto a = latent_constraint_rhs(flat, emp, model, f);
  const auto want = feature_expectation(emp, f);
  CHECK(sup_norm_diff(a, want) <= 1e-15);

  // Fully hidden: the model expectation.
  const auto hidden = LatentFactorization::grid(1, 3);
  const auto b = latent_constraint_rhs(hidden, Distribution({1.0}), model, f);
  CHECK(sup_norm_diff(b, feature_expectation(model, f)) <= 1e-15);

  // Two-by-two by hand: Pr~(Y) = [0.25, 0.75], model [0.1, 0.3, 0.4, 0.2],
  // phi = [1, 2, 3, 4].
  const auto g = LatentFactorization::grid(2, 2);
  const auto c = latent_constraint_rhs(g, Distribution({0.25, 0.75}),
                                       Distribution({0.1, 0.3, 0.4, 0.2}),
                                       FeatureTable::from_rows({{1, 2, 3, 4}}));
  const double hand = 0.25 * (0.1 * 1 + 0.3 * 2) / 0.4 + 0.75 * (0.4 * 3 + 0.2 * 4) / 0.6;
  CHECK(c[0] == Approx(hand).epsilon(1e-15));

  CHECK_THROWS_AS(latent_constraint_rhs(g, Distribution({0.5, 0.5}), Distribution({0.5, 0.5, 0, 0}),
                                        FeatureTable::from_rows({{1, 2, 3, 4}})),
                  ZeroMarginal);
}

TEST_CASE("e_step on the Y-channel equals the latent right-hand side at every model") {
  Rng rng(26);
  for (int trial = 0; trial < 30; ++trial) {
    const auto fact = random_factorization(rng, 1 + rng.next() % 4, 1 + rng.next() % 4);
    const std::size_t k = 1 + rng.next() % 3;
    const auto f = testing::random_features(rng, k, fact.num_elements());
    const auto emp = testing::random_distribution(rng, fact.num_y());
    const UMaxEntProblem p(ElementSpace::indexed(fact.num_elements()), f, fact.y_channel(),
                           EmpiricalObservations::exact(emp));
    for (int i = 0; i < 20; ++i) {
      const auto w = testing::random_weights(rng, k, 2.0);
      const auto model = log_linear_distribution(w, f);
      const auto lhs = e_step(p, w);
      const auto rhs = latent_constraint_rhs(fact, emp, model, f);
      const auto oracle = naive_latent_rhs(fact, emp.probs(), model.probs(), f);
      CHECK(sup_norm_diff(lhs.values(), rhs) <= 1e-12);
      CHECK(sup_norm_diff(rhs, oracle) <= 1e-12);
    }
  }
}

TEST_CASE("verify_latent_reduction reports the identity and a converged fit") {
  Rng rng(27);
  const auto g = LatentFactorization::grid(2, 2);
  const auto f = testing::random_features(rng, 2, 4);
  const auto r = verify_latent_reduction(g, Distribution({0.3, 0.7}), f);
  CHECK(r.reduction == "latent");
  REQUIRE(r.identity_max_error.has_value());
  CHECK(*r.identity_max_error <= 1e-12);
  CHECK(r.converged);
  CHECK(r.residual <= 1e-6);

  // With no hidden part the latent check collapses to standard MaxEnt.
  const auto flat = LatentFactorization::grid(3, 1);
  const auto ff = testing::random_features(rng, 2, 3);
  const Distribution emp({0.2, 0.5, 0.3});
  const auto lr = verify_latent_reduction(flat, emp, ff);
  const UMaxEntProblem p(ElementSpace::indexed(3), ff, flat.y_channel(),
                         EmpiricalObservations::exact(emp));
  const auto sr = verify_maxent_reduction(p);
  CHECK(*lr.identity_max_error <= 1e-12);
  CHECK(*sr.tv_distance <= 1e-6);
  CHECK(lr.residual <= 1e-6);
}

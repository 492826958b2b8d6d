#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "umaxent/classifier_bridge.hpp"
#include "umaxent/log.hpp"

using namespace umaxent;
using doctest::Approx;

namespace {

struct QuietLog {
  QuietLog() { log::set_warning_sink({}); }
  ~QuietLog() { log::reset_warning_sink(); }
};

// Sum over rows and labels of the corrected row times E[phi | label],
// written out directly from the model.
Vector naive_soft_e_step(const Matrix& rows, const Vector& train, const Vector& sample_w,
                         const std::vector<std::size_t>& label_of, const Vector& model,
                         const FeatureTable& f, bool correct) {
  const std::size_t nl = rows.cols();
  Vector prior(nl, 0.0);
  for (std::size_t x = 0; x < model.size(); ++x) prior[label_of[x]] += model[x];
  Vector out(f.num_features(), 0.0);
  double wsum = 0.0;
  for (double w : sample_w) wsum += w;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    Vector c(nl);
    double total = 0.0;
    for (std::size_t l = 0; l < nl; ++l) total += c[l] = rows(r, l) * (correct ? prior[l] / train[l] : 1.0);
    for (std::size_t l = 0; l < nl; ++l) {
      for (std::size_t x = 0; x < model.size(); ++x) {
        if (label_of[x] != l) continue;
        for (std::size_t k = 0; k < out.size(); ++k) {
          out[k] += sample_w[r] / wsum * c[l] / total * model[x] / prior[l] * f(k, x);
        }
      }
    }
  }
  return out;
}

Matrix random_rows(Rng& rng, std::size_t n, std::size_t labels) {
  Matrix m(n, labels);
  for (std::size_t r = 0; r < n; ++r) {
    double total = 0.0;
    for (std::size_t l = 0; l < labels; ++l) total += m(r, l) = 0.05 + rng.uniform();
    for (std::size_t l = 0; l < labels; ++l) m(r, l) /= total;
  }
  return m;
}

}  // namespace

TEST_CASE("label spaces and maps") {
  CHECK_THROWS_AS(LabelSpace({"a", "a"}), ValidationError);
  CHECK_THROWS_AS(LabelSpace(std::vector<std::string>{}), ValidationError);
  CHECK(LabelSpace::indexed(3).size() == 3);

  Matrix d(3, 2);
  d(0, 1) = 1;
  d(1, 0) = 1;
  d(2, 1) = 1;
  const auto map = LabelMap::from_matrix(d);
  CHECK(map.label_of(0) == 1);
  CHECK(map.label_of(1) == 0);
  const Matrix back = map.matrix();
  for (std::size_t x = 0; x < 3; ++x) {
    for (std::size_t l = 0; l < 2; ++l) CHECK(back(x, l) == d(x, l));
  }
  const auto marg = map.label_marginal(Distribution({0.2, 0.3, 0.5}));
  CHECK(marg[0] == Approx(0.3));
  CHECK(marg[1] == Approx(0.7));

  const auto fact = map.induced_factorization();
  CHECK(fact.num_y() == 2);
  CHECK(fact.completions(1).size() == 2);
  CHECK(fact.y_of(2) == 1);

  Matrix two(2, 2);
  two(0, 0) = two(0, 1) = 1;
  two(1, 0) = 1;
  CHECK_THROWS_AS(LabelMap::from_matrix(two), ValidationError);
  CHECK_THROWS_AS(LabelMap({0, 2}, 2), ValidationError);
}

TEST_CASE("classifier profile validation and lift") {
  CHECK_THROWS_AS(ClassifierProfile(Matrix::from_rows({{0.9, 0.2}, {0.1, 0.9}})), ValidationError);
  CHECK_THROWS_AS(ClassifierProfile(Matrix::from_rows({{1.0, 0.0, 0.0}})), ValidationError);
  const ClassifierProfile p(Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}}));
  const auto channel = p.lift(LabelMap({0, 1, 1}, 2));
  CHECK(channel.num_observations() == 2);
  CHECK(channel.num_elements() == 3);
  CHECK(channel(0, 0) == 0.9);
  CHECK(channel(1, 0) == 0.1);
  CHECK(channel(0, 2) == 0.2);
  CHECK(channel(1, 2) == 0.8);
}

TEST_CASE("hard-label e-step with a perfect classifier and matching labels") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.next() % 5, k = 1 + rng.next() % 3;
    const auto f = testing::random_features(rng, k, n);
    const auto emp = testing::random_distribution(rng, n);
    const auto w = testing::random_weights(rng, k, 2.0);
    const auto got = hard_label_e_step(emp, ClassifierProfile::perfect(n), LabelMap::identity(n), w, f);
    CHECK(sup_norm_diff(got.values(), feature_expectation(emp, f)) <= 1e-12);
  }
}

TEST_CASE("hard-label e-step with a perfect classifier on a quotient is latent MaxEnt") {
  Rng rng(32);
  const LabelMap map({0, 1, 0, 1}, 2);
  const auto fact = map.induced_factorization();
  const auto f = testing::random_features(rng, 2, 4);
  const Distribution emp({0.35, 0.65});
  for (int i = 0; i < 100; ++i) {
    const auto w = testing::random_weights(rng, 2, 2.0);
    const auto got = hard_label_e_step(emp, ClassifierProfile::perfect(2), map, w, f);
    const auto want = latent_constraint_rhs(fact, emp, log_linear_distribution(w, f), f);
    CHECK(sup_norm_diff(got.values(), want) <= 1e-12);
  }
}

TEST_CASE("hard-label e-step with a symmetric noisy classifier") {
  // Model [0.7, 0.3], phi = [1, 0], accuracy 0.9, Pr~(xi) = [0.6, 0.4].
  const auto f = FeatureTable::from_rows({{1, 0}});
  const Weights w({std::log(7.0 / 3.0)});
  const ClassifierProfile profile(Matrix::from_rows({{0.9, 0.1}, {0.1, 0.9}}));
  const auto got = hard_label_e_step(Distribution({0.6, 0.4}), profile, LabelMap::identity(2), w, f);
  const double hand = 0.6 * 0.63 / 0.66 + 0.4 * 0.07 / 0.34;
  CHECK(got[0] == Approx(hand).epsilon(1e-14));
}

TEST_CASE("soft correction examples") {
  const Distribution row({0.6, 0.4});
  const auto out = soft_correction(row, Distribution({0.5, 0.5}), Distribution({0.9, 0.1}));
  CHECK(out[0] == Approx(0.54 / 0.58).epsilon(1e-15));
  CHECK(out[1] == Approx(0.04 / 0.58).epsilon(1e-15));
  CHECK(out[0] == Approx(0.9310).epsilon(1e-4));

  const auto pm = soft_correction(Distribution::point_mass(3, 1), Distribution({0.2, 0.3, 0.5}),
                                  Distribution({0.6, 0.1, 0.3}));
  CHECK(pm[1] == 1.0);
  CHECK(pm[0] == 0.0);

  CHECK_THROWS_AS(soft_correction(row, Distribution({1.0, 0.0}), Distribution({0.5, 0.5})),
                  ZeroTrainingPrior);
  CHECK_THROWS_AS(soft_correction(Distribution({1.0, 0.0}), Distribution({0.5, 0.5}),
                                  Distribution({0.0, 1.0})),
                  DegenerateRow);
}

TEST_CASE("soft correction is the identity when the priors agree") {
  Rng rng(33);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + rng.next() % 6;
    const auto row = testing::random_distribution(rng, n);
    const auto prior = testing::random_distribution(rng, n);
    const auto out = soft_correction(row, prior, prior);
    CHECK(sup_norm_diff(out.probs(), row.probs()) <= 1e-14);
  }
}

TEST_CASE("soft batch validation") {
  CHECK_THROWS_AS(SoftClassifierBatch(Matrix::from_rows({{0.5, 0.4}}), Distribution({0.5, 0.5})),
                  ValidationError);
  CHECK_THROWS_AS(SoftClassifierBatch(Matrix::from_rows({{0.5, 0.5}}), Distribution({1.0, 0.0})),
                  ZeroTrainingPrior);
  CHECK_THROWS_AS(SoftClassifierBatch(Matrix::from_rows({{0.5, 0.5}}), Distribution({0.2, 0.3, 0.5})),
                  DimensionMismatch);
  const SoftClassifierBatch b(Matrix::from_rows({{0.5, 0.5 + 1e-9}, {1, 0}}), Distribution({0.5, 0.5}));
  CHECK(b.row(0)[0] + b.row(0)[1] == Approx(1.0).epsilon(1e-15));
  CHECK(b.sample_weights()[0] == 0.5);
}

TEST_CASE("soft e-step reductions") {
  Rng rng(34);
  const std::size_t n = 4;
  const auto f = testing::random_features(rng, 2, n);
  const auto w = testing::random_weights(rng, 2, 1.5);

  // Point-mass rows from a perfect classifier give the empirical expectation
  // over the labelled elements.
  Matrix rows(6, n);
  const std::size_t labels[6] = {0, 2, 2, 3, 1, 2};
  Vector counts(n, 0.0);
  for (std::size_t r = 0; r < 6; ++r) {
    rows(r, labels[r]) = 1.0;
    counts[labels[r]] += 1.0;
  }
  const SoftClassifierBatch batch(rows, testing::random_distribution(rng, n));
  const auto got = soft_e_step(batch, LabelMap::identity(n), w, f);
  CHECK(sup_norm_diff(got.values(), feature_expectation(Distribution::normalize(counts), f)) <= 1e-12);

  // Uninformative rows under a uniform training prior return the model's own
  // expectations.
  Matrix flat(3, 2);
  for (std::size_t r = 0; r < 3; ++r) flat(r, 0) = flat(r, 1) = 0.5;
  const SoftClassifierBatch uninformative(flat, Distribution::uniform(2));
  const LabelMap quotient({0, 1, 1, 0}, 2);
  const auto u = soft_e_step(uninformative, quotient, w, f);
  CHECK(sup_norm_diff(u.values(), feature_expectation(log_linear_distribution(w, f), f)) <= 1e-12);
}

TEST_CASE("soft e-step matches enumeration") {
  Rng rng(35);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t nl = 2 + rng.next() % 3;
    std::vector<std::size_t> label_of;
    for (std::size_t l = 0; l < nl; ++l) label_of.push_back(l);
    for (std::size_t extra = rng.next() % 4; extra > 0; --extra) label_of.push_back(rng.next() % nl);
    const std::size_t n = label_of.size(), k = 1 + rng.next() % 3;
    const auto f = testing::random_features(rng, k, n);
    const auto rows = random_rows(rng, 4, nl);
    const auto train = testing::random_distribution(rng, nl);
    Vector sw(4);
    for (double& v : sw) v = 0.1 + rng.uniform();
    const SoftClassifierBatch batch(rows, train, sw);
    const LabelMap map(label_of, nl);
    const auto w = testing::random_weights(rng, k, 1.5);
    const Vector model = testing::naive_model(w.values(), f);
    for (bool ablate : {false, true}) {
      SoftEStepOptions opts;
      opts.ablate_correction = ablate;
      const auto got = soft_e_step(batch, map, w, f, opts);
      const auto want = naive_soft_e_step(rows, train.probs(), sw, label_of, model, f, !ablate);
      CHECK(sup_norm_diff(got.values(), want) <= 1e-12);
    }
  }
}

TEST_CASE("sample weights act like repeated rows") {
  Rng rng(36);
  const auto f = testing::random_features(rng, 2, 3);
  const auto rows = random_rows(rng, 2, 3);
  const auto train = testing::random_distribution(rng, 3);
  Matrix repeated(3, 3);
  for (std::size_t l = 0; l < 3; ++l) {
    repeated(0, l) = rows(0, l);
    repeated(1, l) = rows(1, l);
    repeated(2, l) = rows(1, l);
  }
  const SoftClassifierBatch weighted(rows, train, Vector{1.0, 2.0});
  const SoftClassifierBatch plain(repeated, train);
  const auto w = testing::random_weights(rng, 2);
  const auto map = LabelMap::identity(3);
  CHECK(sup_norm_diff(soft_e_step(weighted, map, w, f).values(),
                      soft_e_step(plain, map, w, f).values()) <= 1e-14);
}

TEST_CASE("classifier_em_solve with a perfect batch matches standard MaxEnt") {
  Rng rng(37);
  const std::size_t n = 5;
  const auto f = testing::random_features(rng, 2, n);
  Matrix rows(40, n);
  Vector counts(n, 0.0);
  for (std::size_t r = 0; r < 40; ++r) {
    const std::size_t x = rng.next() % n;
    rows(r, x) = 1.0;
    counts[x] += 1.0;
  }
  ClassifierProblem problem{f, LabelMap::identity(n), std::nullopt, std::nullopt,
                            SoftClassifierBatch(rows, testing::random_distribution(rng, n))};
  const auto em = classifier_em_solve(problem);
  CHECK(em.converged);
  const auto st = solve_standard_maxent(Distribution::normalize(counts), f);
  CHECK(total_variation(log_linear_distribution(em.weights, f), log_linear_distribution(st.weights, f)) <=
        1e-6);
  CHECK(soft_constraint_residual(*problem.batch, problem.map, em.weights, f) <= 1e-6);
}

TEST_CASE("classifier_em_solve on a perfect quotient batch matches latent MaxEnt") {
  Rng rng(38);
  const LabelMap map({0, 0, 1, 1, 2}, 3);
  const auto f = testing::random_features(rng, 2, 5);
  const Distribution emp({0.5, 0.3, 0.2});
  Matrix rows(10, 3);
  for (std::size_t r = 0; r < 10; ++r) rows(r, r < 5 ? 0 : r < 8 ? 1 : 2) = 1.0;
  ClassifierProblem problem{f, map, std::nullopt, std::nullopt,
                            SoftClassifierBatch(rows, Distribution({0.2, 0.5, 0.3}))};
  const auto em = classifier_em_solve(problem);
  const auto fact = map.induced_factorization();
  const UMaxEntProblem latent(ElementSpace::indexed(5), f, fact.y_channel(),
                              EmpiricalObservations::exact(emp));
  const auto ref = em_solve(latent);
  CHECK(em.converged);
  CHECK(ref.converged);
  CHECK(total_variation(log_linear_distribution(em.weights, f), log_linear_distribution(ref.weights, f)) <=
        1e-6);
}

TEST_CASE("classifier_em_solve on hard labels delegates to the lifted channel") {
  Rng rng(39);
  const auto f = testing::random_features(rng, 2, 4);
  const LabelMap map({0, 1, 1, 0}, 2);
  const ClassifierProfile profile(Matrix::from_rows({{0.85, 0.15}, {0.25, 0.75}}));
  const Distribution emp({0.45, 0.55});
  ClassifierProblem problem{f, map, profile, emp, std::nullopt};
  const auto a = classifier_em_solve(problem);
  const auto b = em_solve(hard_label_problem(emp, profile, map, f));
  CHECK(sup_norm_diff(a.weights.values(), b.weights.values()) == 0.0);
  CHECK(a.trace.size() == b.trace.size());
}

TEST_CASE("soft EM traces are monotone in likelihood") {
  QuietLog quiet;
  Rng rng(40);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t nl = 2 + rng.next() % 2;
    const LabelMap map({0, 1, nl - 1, 0, 1}, nl);
    const auto f = testing::random_features(rng, 2, 5);
    ClassifierProblem problem{f, map, std::nullopt, std::nullopt,
                              SoftClassifierBatch(random_rows(rng, 20, nl),
                                                  testing::random_distribution(rng, nl))};
    const auto r = classifier_em_solve(problem);
    for (std::size_t t = 1; t < r.trace.size(); ++t) {
      CHECK(r.trace.records[t].loglik >= r.trace.records[t - 1].loglik - 1e-9);
    }
  }
}

TEST_CASE("classifier problem validation") {
  const auto f = FeatureTable::from_rows({{1, 0, 2}});
  ClassifierProblem none{f, LabelMap::identity(3), std::nullopt, std::nullopt, std::nullopt};
  CHECK_THROWS_AS(none.validate(), ValidationError);
  ClassifierProblem wrong{f, LabelMap::identity(2), ClassifierProfile::perfect(2),
                          Distribution({0.5, 0.5}), std::nullopt};
  CHECK_THROWS_AS(wrong.validate(), DimensionMismatch);
}

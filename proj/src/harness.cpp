#include "umaxent/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "umaxent/random.hpp"

namespace umaxent::harness {
namespace fs = std::filesystem;

namespace {

Vector to_vector(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of numbers");
  Vector out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw ValidationError(std::string(what) + " must contain only numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

Matrix to_matrix(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) {
    throw ValidationError(std::string(what) + " must be a non-empty array of rows");
  }
  std::vector<Vector> rows;
  for (const auto& row : j) rows.push_back(to_vector(row, what));
  return Matrix::from_rows(rows);
}

std::vector<std::string> to_strings(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ValidationError(std::string(what) + " must contain only strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

void expect_dim(const char* what, std::size_t declared, std::size_t actual) {
  if (declared != actual) throw DimensionMismatch(what, declared, actual);
}

std::size_t required_dim(const json& dims, const char* key) {
  const bool ok = dims.contains(key) && dims.at(key).is_number_integer() &&
                  dims.at(key).get<std::int64_t>() >= 0;
  if (!ok) throw ValidationError(std::string("dims.") + key + " must be a nonnegative integer");
  return dims.at(key).get<std::size_t>();
}

EmpiricalObservations parse_empirical(const json& j) {
  if (j.contains("counts")) {
    std::vector<std::uint64_t> counts;
    for (const auto& v : j.at("counts")) {
      if (!v.is_number_unsigned()) {
        throw ValidationError("empirical counts must be nonnegative integers");
      }
      counts.push_back(v.get<std::uint64_t>());
    }
    return EmpiricalObservations::from_counts(std::move(counts));
  }
  if (j.contains("exact")) {
    return EmpiricalObservations::exact(Distribution(to_vector(j.at("exact"), "empirical.exact")));
  }
  throw ValidationError("empirical section needs 'counts' or 'exact'");
}

json empirical_json(const EmpiricalObservations& e) {
  if (e.source() == EmpiricalObservations::Source::counts) return {{"counts", e.counts()}};
  return {{"exact", e.dist().probs()}};
}

const char* init_name(InitMode mode) {
  switch (mode) {
    case InitMode::zero: return "zero";
    case InitMode::random: return "random";
    case InitMode::prior: return "prior";
  }
  return "zero";
}

void parse_config(const json& j, EmConfig& config) {
  if (j.contains("em")) {
    const json& em = j.at("em");
    config.lambda_tol = em.value("lambda_tol", config.lambda_tol);
    config.likelihood_tol = em.value("likelihood_tol", config.likelihood_tol);
    config.max_em_iter = em.value("max_em_iter", config.max_em_iter);
    config.random_scale = em.value("random_scale", config.random_scale);
    config.restarts = em.value("restarts", config.restarts);
    if (em.contains("init")) config.init = parse_init_mode(em.at("init").get<std::string>());
    if (em.contains("zero_marginal")) {
      const auto policy = em.at("zero_marginal").get<std::string>();
      if (policy == "error") {
        config.zero_marginal = ZeroMarginalPolicy::error;
      } else if (policy == "skip") {
        config.zero_marginal = ZeroMarginalPolicy::skip;
      } else {
        throw ValidationError("zero_marginal must be 'error' or 'skip'");
      }
    }
    if (em.contains("prior")) config.prior = Distribution(to_vector(em.at("prior"), "em.prior"));
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    SolverConfig& inner = config.inner;
    inner.grad_tol = s.value("grad_tol", inner.grad_tol);
    inner.max_iter = s.value("max_iter", inner.max_iter);
    inner.initial_step = s.value("initial_step", inner.initial_step);
    inner.backtrack_factor = s.value("backtrack_factor", inner.backtrack_factor);
    inner.sufficient_decrease = s.value("sufficient_decrease", inner.sufficient_decrease);
    inner.divergence_guard = s.value("divergence_guard", inner.divergence_guard);
    inner.lbfgs_memory = s.value("lbfgs_memory", inner.lbfgs_memory);
    if (s.contains("method")) {
      const auto method = s.at("method").get<std::string>();
      if (method == "newton") {
        inner.method = DescentMethod::newton;
      } else if (method == "lbfgs") {
        inner.method = DescentMethod::lbfgs;
      } else if (method == "gradient_descent") {
        inner.method = DescentMethod::gradient_descent;
      } else {
        throw ValidationError("solver.method must be 'newton', 'lbfgs' or 'gradient_descent'");
      }
    }
  }
}

const char* method_name(DescentMethod method) {
  switch (method) {
    case DescentMethod::newton: return "newton";
    case DescentMethod::lbfgs: return "lbfgs";
    case DescentMethod::gradient_descent: return "gradient_descent";
  }
  return "newton";
}

json config_json(const EmConfig& c) {
  json em = {{"lambda_tol", c.lambda_tol},
             {"likelihood_tol", c.likelihood_tol},
             {"max_em_iter", c.max_em_iter},
             {"init", init_name(c.init)},
             {"random_scale", c.random_scale},
             {"restarts", c.restarts},
             {"zero_marginal", c.zero_marginal == ZeroMarginalPolicy::skip ? "skip" : "error"}};
  if (c.prior) em["prior"] = c.prior->probs();
  const SolverConfig& s = c.inner;
  json solver = {{"grad_tol", s.grad_tol},
                 {"max_iter", s.max_iter},
                 {"initial_step", s.initial_step},
                 {"backtrack_factor", s.backtrack_factor},
                 {"sufficient_decrease", s.sufficient_decrease},
                 {"divergence_guard", s.divergence_guard},
                 {"lbfgs_memory", s.lbfgs_memory},
                 {"method", method_name(s.method)}};
  return {{"em", em}, {"solver", solver}};
}

ClassifierBlock parse_classifier(const json& j, std::size_t num_elements) {
  LabelSpace labels(to_strings(j.at("labels"), "classifier.labels"));
  const Matrix d = to_matrix(j.at("label_map"), "classifier.label_map");
  expect_dim("classifier.label_map rows (|X|)", num_elements, d.rows());
  expect_dim("classifier.label_map columns (|Xi|)", labels.size(), d.cols());
  ClassifierBlock block{labels, LabelMap::from_matrix(d), std::nullopt, std::nullopt,
                        std::nullopt, std::nullopt};
  if (j.contains("confusion")) {
    block.profile = ClassifierProfile(to_matrix(j.at("confusion"), "classifier.confusion"));
    expect_dim("classifier.confusion (|Xi|)", labels.size(), block.profile->num_labels());
  }
  if (j.contains("empirical")) {
    block.empirical = parse_empirical(j.at("empirical")).dist();
    expect_dim("classifier.empirical (|Xi|)", labels.size(), block.empirical->size());
  }
  if (j.contains("training_prior")) {
    block.training_prior =
        Distribution(to_vector(j.at("training_prior"), "classifier.training_prior"));
    expect_dim("classifier.training_prior (|Xi|)", labels.size(), block.training_prior->size());
  }
  if (j.contains("batch_csv")) block.batch_csv = j.at("batch_csv").get<std::string>();
  return block;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end != nullptr && *end == '\0';
}

json weights_json(const Weights& w) { return w.values(); }

json solution_json(const FeatureTable& features, const Weights& weights) {
  const Distribution model = log_linear_distribution(weights, features);
  return {{"lambda", weights_json(weights)},
          {"probabilities", model.probs()},
          {"expectations", feature_expectation(model, features)}};
}

}  // namespace

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

UMaxEntProblem ProblemFile::umaxent_problem() const {
  if (!channel) throw ValidationError("problem file has no channel section");
  if (!empirical) throw ValidationError("problem file has no empirical section");
  return UMaxEntProblem(space, features, *channel, *empirical);
}

ClassifierProblem ProblemFile::classifier_problem() const {
  if (!classifier) throw ValidationError("problem file has no classifier section");
  const ClassifierBlock& block = *classifier;
  ClassifierProblem out{features, block.map, block.profile, block.empirical, std::nullopt};
  if (block.batch_csv) {
    if (!block.training_prior) {
      throw ValidationError("classifier batch needs a training_prior");
    }
    fs::path path(*block.batch_csv);
    if (path.is_relative()) path = base_dir / path;
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open classifier batch " + path.string());
    out.batch = SoftClassifierBatch(read_batch_csv(in, block.labels), *block.training_prior);
  }
  out.validate();
  return out;
}

ProblemFile parse_problem(const json& doc, const fs::path& base_dir) {
  try {
    if (!doc.is_object()) throw ValidationError("problem file must be a JSON object");
    const json& dims = doc.at("dims");
    const std::size_t n = required_dim(dims, "elements");
    const std::size_t k = required_dim(dims, "features");

    ElementSpace space = doc.contains("elements")
                             ? ElementSpace(to_strings(doc.at("elements"), "elements"))
                             : ElementSpace::indexed(n);
    expect_dim("elements (|X|)", n, space.size());

    const json& fj = doc.at("features");
    Matrix values = to_matrix(fj.at("values"), "features.values");
    expect_dim("feature rows (K)", k, values.rows());
    expect_dim("feature columns (|X|)", n, values.cols());
    FeatureTable features = fj.contains("names")
                                ? FeatureTable(values, to_strings(fj.at("names"), "features.names"))
                                : FeatureTable(values);

    std::optional<LatentFactorization> latent;
    if (doc.contains("latent")) {
      const json& lj = doc.at("latent");
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (const auto& p : lj.at("pairs")) {
        pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
      }
      latent = LatentFactorization(to_strings(lj.at("y"), "latent.y"),
                                   to_strings(lj.at("z"), "latent.z"), std::move(pairs));
      expect_dim("latent pairs (|X|)", n, latent->num_elements());
    }

    std::optional<ObservationChannel> channel;
    if (doc.contains("channel")) {
      const json& cj = doc.at("channel");
      Matrix m = to_matrix(cj.at("matrix"), "channel.matrix");
      const std::size_t m_obs = required_dim(dims, "observations");
      expect_dim("channel rows (|Omega|)", m_obs, m.rows());
      expect_dim("channel columns (|X|)", n, m.cols());
      channel = cj.contains("observations")
                    ? ObservationChannel(m, to_strings(cj.at("observations"), "channel.observations"))
                    : ObservationChannel(m);
      if (latent && !(channel->matrix() == latent->y_channel().matrix())) {
        throw ValidationError("channel does not match the latent factorization's Y-channel");
      }
    } else if (latent) {
      channel = latent->y_channel();
    }

    std::optional<EmpiricalObservations> empirical;
    if (doc.contains("empirical")) {
      empirical = parse_empirical(doc.at("empirical"));
      if (channel) expect_dim("empirical (|Omega|)", channel->num_observations(), empirical->size());
    }

    std::optional<ClassifierBlock> classifier;
    if (doc.contains("classifier")) classifier = parse_classifier(doc.at("classifier"), n);

    EmConfig config;
    if (doc.contains("config")) parse_config(doc.at("config"), config);
    std::uint64_t seed = doc.value("seed", std::uint64_t{0});
    config.seed = seed;
    if (config.prior) expect_dim("em.prior (|X|)", n, config.prior->size());
    config.validate();

    return ProblemFile{std::move(space), std::move(features), std::move(channel),
                       std::move(empirical), std::move(latent), std::move(classifier),
                       std::move(config), seed, base_dir};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed problem file: ") + e.what());
  }
}

ProblemFile load_problem(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open problem file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("problem file is not valid JSON: " + std::string(e.what()));
  }
  return parse_problem(doc, path.parent_path());
}

json to_json(const ProblemFile& p) {
  json dims = {{"elements", p.space.size()}, {"features", p.features.num_features()}};
  json doc;
  doc["format"] = "umaxent-problem/1";
  doc["elements"] = p.space.ids();
  doc["features"] = {{"names", p.features.names()}, {"values", p.features.values().to_rows()}};
  if (p.channel) {
    dims["observations"] = p.channel->num_observations();
    doc["channel"] = {{"observations", p.channel->observation_names()},
                      {"matrix", p.channel->matrix().to_rows()}};
  }
  if (p.empirical) doc["empirical"] = empirical_json(*p.empirical);
  if (p.latent) {
    json pairs = json::array();
    for (const auto& [y, z] : p.latent->pairs()) pairs.push_back({y, z});
    doc["latent"] = {{"y", p.latent->y_labels()}, {"z", p.latent->z_labels()}, {"pairs", pairs}};
  }
  if (p.classifier) {
    const ClassifierBlock& c = *p.classifier;
    json cj = {{"labels", c.labels.labels()}, {"label_map", c.map.matrix().to_rows()}};
    if (c.profile) cj["confusion"] = c.profile->confusion().to_rows();
    if (c.empirical) cj["empirical"] = {{"exact", c.empirical->probs()}};
    if (c.training_prior) cj["training_prior"] = c.training_prior->probs();
    if (c.batch_csv) cj["batch_csv"] = *c.batch_csv;
    doc["classifier"] = cj;
  }
  doc["dims"] = dims;
  doc["config"] = config_json(p.config);
  doc["seed"] = p.seed;
  return doc;
}

std::string problem_digest(const json& problem_doc) {
  const std::string text = problem_doc.dump();
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

Matrix read_batch_csv(std::istream& in, const LabelSpace& labels) {
  std::vector<Vector> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    Vector row;
    bool numeric = true;
    for (const auto& f : fields) {
      double v = 0.0;
      if (!parse_double(f, v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (!rows.empty() || line_no != 1) {
        throw ValidationError("batch CSV line " + std::to_string(line_no) +
                              " contains a non-numeric field");
      }
      if (fields != labels.labels()) {
        throw ValidationError("batch CSV header does not match the classifier labels");
      }
      continue;
    }
    if (row.size() != labels.size()) {
      throw DimensionMismatch("batch CSV line " + std::to_string(line_no), labels.size(),
                              row.size());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("batch CSV contains no rows");
  return Matrix::from_rows(rows);
}

void write_batch_csv(std::ostream& out, const LabelSpace& labels, const Matrix& rows) {
  for (std::size_t l = 0; l < labels.size(); ++l) out << (l ? "," : "") << labels.labels()[l];
  out << '\n';
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t l = 0; l < rows.cols(); ++l) out << (l ? "," : "") << format_real(rows(r, l));
    out << '\n';
  }
}

void SyntheticSpec::validate() const {
  if (elements < 1) throw ValidationError("synthetic spec needs at least one element");
  if (features < 1) throw ValidationError("synthetic spec needs at least one feature");
  if (observations < elements) {
    throw ValidationError("synthetic channel needs at least as many observations as elements");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
  if (!(lambda_scale >= 0.0) || !(feature_scale >= 0.0)) {
    throw ValidationError("scales must be nonnegative");
  }
}

json to_json(const TruthRecord& t) {
  return {{"format", "umaxent-truth/1"},
          {"problem_digest", t.problem_digest},
          {"dims", {{"elements", t.elements}, {"features", t.features}, {"observations", t.observations}}},
          {"lambda_true", t.lambda},
          {"probabilities", t.probabilities},
          {"expectations", t.expectations},
          {"epsilon", t.epsilon},
          {"exact_marginal", t.exact_marginal},
          {"samples", t.samples},
          {"seed", t.seed}};
}

TruthRecord parse_truth(const json& doc) {
  try {
    TruthRecord t;
    t.lambda = to_vector(doc.at("lambda_true"), "lambda_true");
    t.probabilities = to_vector(doc.at("probabilities"), "probabilities");
    t.expectations = to_vector(doc.at("expectations"), "expectations");
    t.epsilon = doc.value("epsilon", 0.0);
    t.exact_marginal = doc.value("exact_marginal", false);
    t.samples = doc.value("samples", std::uint64_t{0});
    t.seed = doc.value("seed", std::uint64_t{0});
    t.problem_digest = doc.value("problem_digest", std::string());
    const json& dims = doc.at("dims");
    t.elements = required_dim(dims, "elements");
    t.features = required_dim(dims, "features");
    t.observations = dims.value("observations", std::size_t{0});
    return t;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed truth sidecar: ") + e.what());
  }
}

Synthetic generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.elements;
  const std::size_t m = spec.observations;
  const std::size_t k = spec.features;

  Matrix values(k, n);
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t x = 0; x < n; ++x) values(f, x) = rng.uniform(-spec.feature_scale, spec.feature_scale);
  }
  FeatureTable features(std::move(values));

  Vector lambda(k);
  for (double& v : lambda) v = rng.uniform(-spec.lambda_scale, spec.lambda_scale);
  const Weights truth_weights(lambda);

  std::vector<std::size_t> perm(m);
  for (std::size_t i = 0; i < m; ++i) perm[i] = i;
  for (std::size_t i = m; i-- > 1;) std::swap(perm[i], perm[rng.next() % (i + 1)]);

  Matrix cm(m, n, spec.epsilon / static_cast<double>(m));
  for (std::size_t x = 0; x < n; ++x) cm(perm[x], x) += 1.0 - spec.epsilon;
  ObservationChannel channel(std::move(cm));

  const Distribution truth = log_linear_distribution(truth_weights, features);
  std::optional<EmpiricalObservations> empirical;
  if (spec.samples == 0) {
    empirical = EmpiricalObservations::exact(observation_marginal(truth, channel));
  } else {
    std::vector<std::uint64_t> counts(m, 0);
    Vector column(m);
    for (std::uint64_t s = 0; s < spec.samples; ++s) {
      const std::size_t x = rng.categorical(truth.probs());
      for (std::size_t w = 0; w < m; ++w) column[w] = channel(w, x);
      ++counts[rng.categorical(column)];
    }
    empirical = EmpiricalObservations::from_counts(std::move(counts));
  }

  ProblemFile problem{ElementSpace::indexed(n), features, channel, std::move(empirical),
                      std::nullopt, std::nullopt, EmConfig{}, spec.seed, {}};
  problem.config.seed = spec.seed;

  TruthRecord record;
  record.lambda = lambda;
  record.probabilities = truth.probs();
  record.expectations = feature_expectation(truth, features);
  record.epsilon = spec.epsilon;
  record.exact_marginal = spec.samples == 0;
  record.samples = spec.samples;
  record.seed = spec.seed;
  record.elements = n;
  record.features = k;
  record.observations = m;
  record.problem_digest = problem_digest(to_json(problem));
  return {std::move(problem), std::move(record)};
}

SyntheticClassifier generate_classifier(const SyntheticClassifierSpec& spec) {
  const std::size_t num_labels = spec.true_prior.size();
  if (num_labels < 2) throw ValidationError("synthetic classifier needs at least two labels");
  if (spec.training_prior.size() != num_labels) {
    throw DimensionMismatch("training prior", num_labels, spec.training_prior.size());
  }
  if (spec.samples == 0) throw ValidationError("synthetic classifier needs at least one sample");
  const Distribution truth(spec.true_prior);
  const Distribution train(spec.training_prior);
  for (double p : truth) {
    if (!(p > 0.0)) throw ValidationError("true label prior must be strictly positive");
  }

  // Indicator features for all but the last element make every positive
  // distribution log-linear.
  Matrix values(num_labels - 1, num_labels);
  for (std::size_t f = 0; f + 1 < num_labels; ++f) values(f, f) = 1.0;
  FeatureTable features(std::move(values));
  Vector lambda(num_labels - 1);
  for (std::size_t f = 0; f < lambda.size(); ++f) {
    lambda[f] = std::log(truth[f] / truth[num_labels - 1]);
  }

  std::vector<std::uint64_t> counts(num_labels);
  std::uint64_t assigned = 0;
  for (std::size_t l = 0; l + 1 < num_labels; ++l) {
    counts[l] = static_cast<std::uint64_t>(
        std::floor(static_cast<double>(spec.samples) * truth[l] + 0.5));
    counts[l] = std::min(counts[l], spec.samples - assigned);
    assigned += counts[l];
  }
  counts[num_labels - 1] = spec.samples - assigned;

  Rng rng(spec.seed);
  Matrix rows(spec.samples, num_labels);
  Vector log_post(num_labels);
  std::size_t r = 0;
  for (std::size_t l = 0; l < num_labels; ++l) {
    for (std::uint64_t i = 0; i < counts[l]; ++i, ++r) {
      const double raw = spec.separation * static_cast<double>(l) + rng.normal();
      double shift = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < num_labels; ++j) {
        const double d = raw - spec.separation * static_cast<double>(j);
        log_post[j] = -0.5 * d * d + std::log(train[j]);
        shift = std::max(shift, log_post[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < num_labels; ++j) {
        rows(r, j) = std::exp(log_post[j] - shift);
        total += rows(r, j);
      }
      for (std::size_t j = 0; j < num_labels; ++j) rows(r, j) /= total;
    }
  }

  SyntheticClassifier out{
      ClassifierProblem{features, LabelMap::identity(num_labels), std::nullopt, std::nullopt,
                        SoftClassifierBatch(rows, train)},
      rows,
      {}};
  out.truth.lambda = lambda;
  out.truth.probabilities = truth.probs();
  out.truth.expectations = feature_expectation(truth, features);
  out.truth.exact_marginal = false;
  out.truth.samples = spec.samples;
  out.truth.seed = spec.seed;
  out.truth.elements = num_labels;
  out.truth.features = features.num_features();
  out.truth.observations = num_labels;
  return out;
}

Mode parse_mode(const std::string& text) {
  if (text == "umaxent") return Mode::umaxent;
  if (text == "standard") return Mode::standard;
  if (text == "classifier") return Mode::classifier;
  throw ValidationError("unknown mode '" + text + "'");
}

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::umaxent: return "umaxent";
    case Mode::standard: return "standard";
    case Mode::classifier: return "classifier";
  }
  return "umaxent";
}

InitMode parse_init_mode(const std::string& text) {
  if (text == "zero") return InitMode::zero;
  if (text == "random") return InitMode::random;
  if (text == "prior") return InitMode::prior;
  throw ValidationError("unknown init mode '" + text + "'");
}

SolveOutcome solve(const ProblemFile& problem, const SolveOptions& options) {
  SolveOutcome out;
  json result = {{"mode", to_string(options.mode)}};

  if (options.mode == Mode::standard) {
    const UMaxEntProblem p = problem.umaxent_problem();
    const Distribution induced = induced_element_distribution(p);
    const SolverResult s = solve_standard_maxent(induced, p.features(), problem.config.inner);
    const Decomposition d = likelihood_decomposition(p, s.weights, s.weights);
    EmRecord rec;
    rec.iteration = 1;
    rec.lambda = s.weights.values();
    rec.phi_hat = feature_expectation(induced, p.features());
    rec.loglik = log_likelihood(p, s.weights).value;
    rec.q = d.q;
    rec.h = d.h;
    rec.u_star = d.u_star;
    rec.residual = constraint_residual(p, s.weights);
    rec.inner_iterations = s.iterations;
    out.trace.records.push_back(rec);
    out.weights = s.weights;
    out.converged = s.converged;
    result["status"] = to_string(s.status);
    result["iterations"] = s.iterations;
    result["residual"] = rec.residual;
    result["loglik"] = rec.loglik;
  } else {
    EmResult r;
    if (options.mode == Mode::umaxent) {
      r = em_solve(problem.umaxent_problem(), problem.config);
    } else {
      r = classifier_em_solve(problem.classifier_problem(), problem.config,
                              options.ablate_correction);
      result["ablate_correction"] = options.ablate_correction;
    }
    out.trace = std::move(r.trace);
    out.weights = r.weights;
    out.converged = r.converged;
    result["status"] = r.converged ? "converged" : "max_em_iter_exceeded";
    result["stop_reason"] = r.stop_reason;
    result["iterations"] = r.iterations;
    result["residual"] = r.residual;
    result["loglik"] = r.loglik;
  }
  result["converged"] = out.converged;
  result.update(solution_json(problem.features, out.weights));
  out.result = std::move(result);
  out.exit_code = out.converged ? 0 : 2;
  return out;
}

json to_json(const ReductionReport& r) {
  json j = {{"reduction", r.reduction},
            {"tv_distance", r.tv_distance ? json(*r.tv_distance) : json(nullptr)},
            {"residual", r.residual},
            {"eq10_term_norm", r.dropped_term_norm},
            {"iterations", r.iterations},
            {"converged", r.converged}};
  if (r.identity_max_error) j["identity_max_error"] = *r.identity_max_error;
  return j;
}

json reduce(const ProblemFile& problem) {
  json reports = json::array();
  if (problem.channel && problem.empirical && has_disjoint_supports(*problem.channel)) {
    reports.push_back(to_json(verify_maxent_reduction(problem.umaxent_problem(), problem.config)));
  }
  if (problem.latent) {
    if (!problem.empirical) throw ValidationError("latent problem needs an empirical Y section");
    LatentCheckOptions options;
    options.seed = problem.seed;
    reports.push_back(to_json(verify_latent_reduction(*problem.latent, problem.empirical->dist(),
                                                      problem.features, problem.config, options)));
  }
  if (reports.empty()) {
    throw PreconditionViolated(
        "no reduction applies: the channel is not deterministic and no latent factorization is given");
  }
  return reports;
}

json check(const ProblemFile& problem, const json& problem_doc, const TruthRecord& truth) {
  if (!truth.problem_digest.empty() && truth.problem_digest != problem_digest(problem_doc)) {
    throw ValidationError("truth sidecar does not match the problem (digest mismatch)");
  }
  expect_dim("truth elements (|X|)", problem.space.size(), truth.elements);
  expect_dim("truth features (K)", problem.features.num_features(), truth.features);
  expect_dim("truth lambda (K)", problem.features.num_features(), truth.lambda.size());
  expect_dim("truth expectations (K)", problem.features.num_features(), truth.expectations.size());

  const UMaxEntProblem p = problem.umaxent_problem();
  const EmResult r = em_solve(p, problem.config);
  const Distribution model = log_linear_distribution(r.weights, p.features());
  const Vector fitted = feature_expectation(model, p.features());
  const Weights truth_weights(truth.lambda);

  const double expectation_error = sup_norm_diff(fitted, truth.expectations);
  const double truth_gap =
      sup_norm_diff(truth.expectations, e_step(p, r.weights, problem.config.zero_marginal).values());

  json report = {{"converged", r.converged},
                 {"iterations", r.iterations},
                 {"residual", r.residual},
                 {"expectation_error", expectation_error},
                 {"truth_residual", constraint_residual(p, truth_weights, problem.config.zero_marginal)},
                 {"truth_constraint_gap", truth_gap},
                 {"exact_marginal", truth.exact_marginal},
                 {"fitted_expectations", fitted},
                 {"truth_expectations", truth.expectations}};
  if (truth.exact_marginal) {
    report["consistency_pass"] = truth_gap <= 1e-5 && r.residual <= 1e-5;
  } else {
    report["consistency_pass"] = nullptr;
  }
  try {
    report["reductions"] = reduce(problem);
  } catch (const PreconditionViolated&) {
    report["reductions"] = json::array();
  }
  return report;
}

void trace_plot(std::istream& trace_csv, std::ostream& out) {
  std::string line;
  if (!std::getline(trace_csv, line)) throw ValidationError("trace CSV is empty");
  const auto header = split_csv(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("trace CSV has no '" + name + "' column");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t iter_col = column("iter");
  const std::size_t loglik_col = column("loglik");
  const std::size_t residual_col = column("residual");
  std::vector<std::size_t> lambda_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].rfind("lambda_", 0) == 0) lambda_cols.push_back(i);
  }

  out << "iter,loglik,loglik_gain,residual,log10_residual,lambda_step\n";
  bool first = true;
  double prev_loglik = 0.0;
  Vector prev_lambda;
  std::size_t line_no = 1;
  while (std::getline(trace_csv, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw DimensionMismatch("trace CSV line " + std::to_string(line_no), header.size(),
                              fields.size());
    }
    auto number = [&](std::size_t col) {
      double v = 0.0;
      if (!parse_double(fields[col], v)) {
        throw ValidationError("trace CSV line " + std::to_string(line_no) + " has a non-numeric field");
      }
      return v;
    };
    const double loglik = number(loglik_col);
    const double residual = number(residual_col);
    Vector lambda;
    for (std::size_t c : lambda_cols) lambda.push_back(number(c));
    const double gain = first ? 0.0 : loglik - prev_loglik;
    const double step = first ? 0.0 : sup_norm_diff(lambda, prev_lambda);
    const double log_residual = residual > 0.0 ? std::log10(residual) : -std::numeric_limits<double>::infinity();
    out << fields[iter_col] << ',' << format_real(loglik) << ',' << format_real(gain) << ','
        << format_real(residual) << ',' << format_real(log_residual) << ',' << format_real(step)
        << '\n';
    first = false;
    prev_loglik = loglik;
    prev_lambda = std::move(lambda);
  }
}

}  // namespace umaxent::harness

#pragma once

// Batch experiment plumbing: problem files, synthetic ground truth, solver
// dispatch and JSON/CSV reports. The CLI is a thin wrapper over this.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "umaxent/classifier_bridge.hpp"
#include "umaxent/core_model.hpp"
#include "umaxent/em_engine.hpp"
#include "umaxent/specializations.hpp"

namespace umaxent::harness {

using nlohmann::json;

struct ClassifierBlock {
  LabelSpace labels;
  LabelMap map;
  std::optional<ClassifierProfile> profile;
  std::optional<Distribution> empirical;
  std::optional<Distribution> training_prior;
  // Relative paths resolve against the problem file's directory.
  std::optional<std::string> batch_csv;
};

struct ProblemFile {
  ElementSpace space;
  FeatureTable features;
  std::optional<ObservationChannel> channel;
  std::optional<EmpiricalObservations> empirical;
  std::optional<LatentFactorization> latent;
  std::optional<ClassifierBlock> classifier;
  EmConfig config;
  std::uint64_t seed = 0;
  std::filesystem::path base_dir;

  // Throws ValidationError when the channel or empirical section is missing.
  UMaxEntProblem umaxent_problem() const;
  // Loads the batch CSV when the block names one.
  ClassifierProblem classifier_problem() const;
};

ProblemFile parse_problem(const json& doc, const std::filesystem::path& base_dir = {});
ProblemFile load_problem(const std::filesystem::path& path);
json to_json(const ProblemFile& problem);

// FNV-1a over the compact dump; identifies a problem in truth sidecars.
std::string problem_digest(const json& problem_doc);

// Reads N x |Xi| classifier output rows. A first line that does not parse
// as numbers is treated as a header and must list the label names.
Matrix read_batch_csv(std::istream& in, const LabelSpace& labels);
void write_batch_csv(std::ostream& out, const LabelSpace& labels, const Matrix& rows);

struct SyntheticSpec {
  std::size_t elements = 4;
  std::size_t observations = 4;
  std::size_t features = 2;
  double lambda_scale = 1.0;
  double feature_scale = 1.0;
  // Channel = (1 - epsilon) * deterministic permutation + epsilon * uniform.
  double epsilon = 0.2;
  // Zero selects the exact marginal instead of sampled counts.
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TruthRecord {
  Vector lambda;
  Vector probabilities;
  Vector expectations;
  double epsilon = 0.0;
  bool exact_marginal = true;
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;
  std::string problem_digest;
  std::size_t elements = 0;
  std::size_t features = 0;
  std::size_t observations = 0;
};

json to_json(const TruthRecord& truth);
TruthRecord parse_truth(const json& doc);

struct Synthetic {
  ProblemFile problem;
  TruthRecord truth;
};

Synthetic generate(const SyntheticSpec& spec);

// Soft-classifier instance: elements and labels coincide, raw samples are
// scalar draws from N(separation * label, 1), and each row is the Bayes
// posterior under the training prior, so the classifier's implied
// Pr(r | label) equals the generating channel. Label counts are stratified
// to round(N * Pr(label)).
struct SyntheticClassifierSpec {
  Vector true_prior = {0.8, 0.2};
  Vector training_prior = {0.5, 0.5};
  double separation = 2.0;
  std::uint64_t samples = 100'000;
  std::uint64_t seed = 0;
};

struct SyntheticClassifier {
  ClassifierProblem problem;
  Matrix rows;
  TruthRecord truth;
};

SyntheticClassifier generate_classifier(const SyntheticClassifierSpec& spec);

enum class Mode { umaxent, standard, classifier };

Mode parse_mode(const std::string& text);
const char* to_string(Mode mode);
InitMode parse_init_mode(const std::string& text);

struct SolveOptions {
  Mode mode = Mode::umaxent;
  bool ablate_correction = false;
};

struct SolveOutcome {
  json result;
  EmTrace trace;
  Weights weights;
  bool converged = false;
  // 0 on convergence, 2 when iteration limits were hit.
  int exit_code = 0;
};

SolveOutcome solve(const ProblemFile& problem, const SolveOptions& options = {});

json to_json(const ReductionReport& report);

// Runs every applicable reduction verifier. Throws PreconditionViolated when
// none applies.
json reduce(const ProblemFile& problem);

// Solves in uMaxEnt mode and compares against the truth sidecar. Throws
// ValidationError when the sidecar does not describe this problem.
json check(const ProblemFile& problem, const json& problem_doc, const TruthRecord& truth);

// Plot-ready columns from a trace CSV: iter, loglik, loglik_gain, residual,
// log10_residual, lambda_step.
void trace_plot(std::istream& trace_csv, std::ostream& out);

std::string format_real(double v);

}  // namespace umaxent::harness

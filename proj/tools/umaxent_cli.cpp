// umaxent: batch driver for the uncertain maximum entropy solver.
//
//   umaxent generate --out DIR [--epsilon E] [--samples N] ...
//   umaxent generate --classifier --out DIR [--samples N] ...
//   umaxent solve PROBLEM [--mode M] [--init I] [--tol T] [--max-iter N] [--out DIR]
//   umaxent check PROBLEM TRUTH
//   umaxent reduce PROBLEM
//   umaxent trace-plot TRACE
//
// Exit codes: 0 success, 1 invalid input or solver error, 2 iteration limit hit.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "umaxent/harness.hpp"

namespace fs = std::filesystem;
using umaxent::harness::json;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::optional<std::string> init;
};

void apply(const Overrides& o, umaxent::harness::ProblemFile& problem) {
  if (o.seed) {
    problem.seed = *o.seed;
    problem.config.seed = *o.seed;
  }
  if (o.tol) problem.config.lambda_tol = *o.tol;
  if (o.max_iter) problem.config.max_em_iter = *o.max_iter;
  if (o.init) problem.config.init = umaxent::harness::parse_init_mode(*o.init);
  problem.config.validate();
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw umaxent::ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw umaxent::ValidationError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw umaxent::ValidationError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw umaxent::ValidationError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertain maximum entropy solver"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic problem and its truth sidecar");
  umaxent::harness::SyntheticSpec spec;
  umaxent::harness::SyntheticClassifierSpec cspec;
  bool classifier = false;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  std::uint64_t gen_samples = 0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--samples", gen_samples,
                  "Sample count (0 = exact marginal; classifier default 100000)");
  gen->add_option("--elements", spec.elements, "|X|");
  gen->add_option("--observations", spec.observations, "|Omega| (>= |X|)");
  gen->add_option("--features", spec.features, "K");
  gen->add_option("--epsilon", spec.epsilon, "Channel noise in [0, 1]");
  gen->add_option("--lambda-scale", spec.lambda_scale, "lambda_true ~ U[-s, s]");
  gen->add_option("--feature-scale", spec.feature_scale, "phi ~ U[-s, s]");
  gen->add_flag("--classifier", classifier, "Generate a soft-classifier batch instead");
  gen->add_option("--true-prior", cspec.true_prior, "Classifier: label prior of the data");
  gen->add_option("--training-prior", cspec.training_prior, "Classifier: training label prior");
  gen->add_option("--separation", cspec.separation, "Classifier: class mean spacing");

  // solve
  auto* solve = app.add_subcommand("solve", "Fit a problem file");
  std::string solve_problem, solve_out, mode = "umaxent";
  bool ablate = false;
  Overrides overrides;
  solve->add_option("problem", solve_problem, "Problem JSON")->required();
  solve->add_option("--mode", mode, "umaxent | standard | classifier")
      ->check(CLI::IsMember({"umaxent", "standard", "classifier"}));
  solve->add_option("--init", overrides.init, "zero | random | prior")
      ->check(CLI::IsMember({"zero", "random", "prior"}));
  solve->add_option("--tol", overrides.tol, "EM lambda tolerance");
  solve->add_option("--max-iter", overrides.max_iter, "EM iteration cap");
  solve->add_option("--seed", overrides.seed, "Seed for random initialization");
  solve->add_flag("--ablate-correction", ablate, "Classifier: skip the prior correction");
  solve->add_option("--out", solve_out, "Directory for result.json and trace.csv");

  // check
  auto* check = app.add_subcommand("check", "Compare a fit against a truth sidecar");
  std::string check_problem, check_truth;
  Overrides check_overrides;
  check->add_option("problem", check_problem, "Problem JSON")->required();
  check->add_option("truth", check_truth, "Truth JSON")->required();
  check->add_option("--tol", check_overrides.tol, "EM lambda tolerance");
  check->add_option("--max-iter", check_overrides.max_iter, "EM iteration cap");

  // reduce
  auto* reduce = app.add_subcommand("reduce", "Run the reduction verifiers");
  std::string reduce_problem;
  reduce->add_option("problem", reduce_problem, "Problem JSON")->required();

  // trace-plot
  auto* plot = app.add_subcommand("trace-plot", "Plot-ready columns from a trace CSV");
  std::string trace_path;
  plot->add_option("trace", trace_path, "Trace CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors share the validation exit code; help requests stay 0.
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      prepare_dir(gen_out);
      const fs::path dir(gen_out);
      if (classifier) {
        cspec.seed = gen_seed;
        if (gen_samples > 0) cspec.samples = gen_samples;
        const auto synth = umaxent::harness::generate_classifier(cspec);
        const auto labels = umaxent::LabelSpace::indexed(synth.problem.map.num_labels());
        umaxent::harness::ProblemFile problem{
            umaxent::ElementSpace::indexed(synth.problem.map.num_elements()),
            synth.problem.features,
            std::nullopt,
            std::nullopt,
            std::nullopt,
            umaxent::harness::ClassifierBlock{labels, synth.problem.map, std::nullopt,
                                              std::nullopt, synth.problem.batch->training_prior(),
                                              std::string("batch.csv")},
            umaxent::EmConfig{},
            gen_seed,
            dir};
        problem.config.seed = gen_seed;
        std::ofstream batch(dir / "batch.csv", std::ios::binary);
        umaxent::harness::write_batch_csv(batch, labels, synth.rows);
        const json doc = umaxent::harness::to_json(problem);
        auto truth = synth.truth;
        truth.problem_digest = umaxent::harness::problem_digest(doc);
        write_json(dir / "problem.json", doc);
        write_json(dir / "truth.json", umaxent::harness::to_json(truth));
      } else {
        spec.seed = gen_seed;
        spec.samples = gen_samples;
        const auto synth = umaxent::harness::generate(spec);
        write_json(dir / "problem.json", umaxent::harness::to_json(synth.problem));
        write_json(dir / "truth.json", umaxent::harness::to_json(synth.truth));
      }
      return 0;
    }

    if (*solve) {
      auto problem = umaxent::harness::load_problem(solve_problem);
      apply(overrides, problem);
      umaxent::harness::SolveOptions options{umaxent::harness::parse_mode(mode), ablate};
      const auto outcome = umaxent::harness::solve(problem, options);
      if (solve_out.empty()) {
        std::cout << outcome.result.dump(2) << '\n';
      } else {
        prepare_dir(solve_out);
        write_json(fs::path(solve_out) / "result.json", outcome.result);
        std::ofstream trace(fs::path(solve_out) / "trace.csv", std::ios::binary);
        outcome.trace.write_csv(trace);
      }
      return outcome.exit_code;
    }

    if (*check) {
      const json doc = read_json(check_problem);
      auto problem = umaxent::harness::parse_problem(doc, fs::path(check_problem).parent_path());
      apply(check_overrides, problem);
      const auto truth = umaxent::harness::parse_truth(read_json(check_truth));
      const json report = umaxent::harness::check(problem, doc, truth);
      std::cout << report.dump(2) << '\n';
      return report.at("converged").get<bool>() ? 0 : 2;
    }

    if (*reduce) {
      const auto problem = umaxent::harness::load_problem(reduce_problem);
      std::cout << umaxent::harness::reduce(problem).dump(2) << '\n';
      return 0;
    }

    if (*plot) {
      std::ifstream in(trace_path);
      if (!in) throw umaxent::ValidationError("cannot open " + trace_path);
      umaxent::harness::trace_plot(in, std::cout);
      return 0;
    }
  } catch (const umaxent::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// Command-line front end for the pipeline.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "act/act.hpp"

namespace {

struct Halt {};

struct Options {
  act::PipelineConfig cfg;
  std::string annotation_strategy = "naive";
  std::string critic_strategy = "naive";
  std::string rule = "threshold";
  std::string review_mode = "simulated_oracle";
  std::string train_loss = "corrected_mean";
  std::optional<double> accuracy;
  bool perfect = false;
  bool no_curve = false;
  std::string halt_after;
  std::string crash_after;
};

template <typename E>
E parse_enum(const std::string& s, const char* what) {
  const auto v = act::json(s).get<E>();
  if (act::json(v).get<std::string>() != s) throw act::ValidationError(std::string("unknown ") + what + " '" + s + "'");
  return v;
}

act::PipelineConfig finish(Options& o) {
  auto& c = o.cfg;
  c.annotation_strategy = parse_enum<act::AnnotationStrategy>(o.annotation_strategy, "annotation strategy");
  c.critic_strategy = parse_enum<act::CriticStrategy>(o.critic_strategy, "critic strategy");
  c.rule = act::sampling_rule_from_string(o.rule);
  c.review_mode = act::review_mode_from_string(o.review_mode);
  c.train_loss = parse_enum<act::LossSelection>(o.train_loss, "loss");
  if (o.accuracy) c.simulator.annotator_accuracy = *o.accuracy;
  c.simulator.perfect_criticizer = o.perfect;
  c.budget_curve = !o.no_curve;
  c.validate();
  return c;
}

act::PipelineRun::Hook hook_for(const Options& o) {
  if (o.halt_after.empty() && o.crash_after.empty()) return {};
  auto matches = [](const std::string& spec, const std::string& event) {
    return !spec.empty() && (event == spec || event == "stage:" + spec);
  };
  return [=](const std::string& event) {
    if (matches(o.crash_after, event)) {
      std::fflush(stdout);
      std::_Exit(3);
    }
    if (matches(o.halt_after, event)) throw Halt{};
  };
}

void print_state(const act::RunState& s, const act::fs::path& dir) {
  act::json j = s;
  j["dir"] = dir.string();
  std::cout << j.dump(2) << "\n";
}

/// Runs stages until `target` (or the end) is reached.
int run_until(Options& o, std::optional<act::Stage> target) {
  auto run = act::PipelineRun::open(finish(o));
  const auto hook = hook_for(o);
  try {
    while ((!target || run.stage() < *target) && run.step(hook)) {
    }
  } catch (const Halt&) {
  }
  print_state(run.state(), run.dir());
  return 0;
}

std::vector<std::uint64_t> seed_list(std::uint64_t first, int count) {
  std::vector<std::uint64_t> out;
  for (int k = 0; k < count; ++k) out.push_back(first + static_cast<std::uint64_t>(k));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annotation pipeline: machine labels, criticism, budgeted human review, correction"};
  app.set_config("--config", "", "INI file whose keys are the long option names");
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  auto& c = o.cfg;
  app.add_option("--dataset", c.dataset, "Dataset JSONL");
  app.add_option("--workspace", c.workspace, "Directory holding run directories")->capture_default_str();
  app.add_option("--run-id", c.run_id, "Run name (default: derived from the config hash)");
  app.add_option("--annotator-endpoint", c.annotator.endpoint, "Chat-completion URL or 'simulated'")
      ->capture_default_str();
  app.add_option("--annotator-model", c.annotator.model);
  app.add_option("--annotation-strategy", o.annotation_strategy, "naive | cot")->capture_default_str();
  app.add_option("--critic-endpoint", c.critic.endpoint, "Chat-completion URL or 'simulated'")->capture_default_str();
  app.add_option("--critic-model", c.critic.model);
  app.add_flag("--critic-logprobs", c.critic.logprobs, "Request token log-probabilities from the criticizer");
  app.add_option("--critic-strategy", o.critic_strategy,
                 "naive | cot | mc | devil | naive_logit | cot_logit | cot_ppl")
      ->capture_default_str();
  app.add_option("--temperature", c.annotator.temperature)->capture_default_str();
  app.add_option("--retries", c.annotator.retries)->capture_default_str();
  app.add_option("--api-key-env", c.annotator.api_key_env, "Environment variable with the bearer token");
  app.add_option("--sim-accuracy", o.accuracy, "Simulated annotator accuracy");
  app.add_flag("--perfect-criticizer", o.perfect, "Simulated criticizer knows exactly which labels are wrong");
  app.add_option("--sim-seed", c.simulator_seed, "Simulator seed (default: --seed)");
  app.add_option("--rule", o.rule, "normalization | exponential | threshold | ppl_priority")->capture_default_str();
  auto* budget = app.add_option("--budget", c.budget, "Review budget B");
  app.add_option("--proportion", c.proportion, "Review budget as a fraction b of N")->excludes(budget);
  app.add_option("--beta", c.beta, "Exponential-rule temperature")->capture_default_str();
  app.add_option("--seed", c.seed)->capture_default_str();
  app.add_option("--review-mode", o.review_mode, "interactive | simulated_oracle | import_file")
      ->capture_default_str();
  app.add_option("--reviews-file", c.reviews_file, "Reviews JSONL for import_file mode");
  app.add_option("--reviewer", c.reviewer)->capture_default_str();
  app.add_flag("--no-budget-curve", o.no_curve, "Skip the budget curve and ABS");
  app.add_option("--train-loss", o.train_loss, "plain_human | plain_machine | corrected_mean | act")
      ->capture_default_str();
  app.add_option("--lambda", c.lambda, "Machine-loss weight for the act loss")->capture_default_str();
  app.add_option("--l2", c.l2)->capture_default_str();
  app.add_option("--epochs", c.epochs)->capture_default_str();
  app.add_option("--embeddings", c.embeddings, "JSONL of {item_id, features}");
  app.add_option("--parallelism", c.parallelism, "Concurrent backend calls")->capture_default_str();
  app.add_option("--halt-after", o.halt_after, "Stop cleanly after a stage name or review:<k>");
  app.add_option("--crash-after", o.crash_after, "Exit abruptly after a stage name or review:<k> (testing)");

  auto* run_cmd = app.add_subcommand("run", "Run or resume the whole pipeline");
  auto* annotate = app.add_subcommand("annotate", "Run through annotation");
  auto* criticize = app.add_subcommand("criticize", "Run through criticism");
  auto* sample = app.add_subcommand("sample", "Run through sampling");
  auto* train = app.add_subcommand("train", "Run through training on the corrected labels");

  auto* review = app.add_subcommand("review", "Human review");
  review->require_subcommand(1);
  auto* serve = review->add_subcommand("serve", "Serve the review API and console assets");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--static", static_dir, "Directory with the console's built assets");
  auto* import = review->add_subcommand("import", "Apply reviews from a JSONL file");
  std::string import_file;
  import->add_option("file", import_file)->required();

  auto* export_cmd = app.add_subcommand("export", "Write corrected labels and metrics");
  std::string out_dir;
  export_cmd->add_option("--out", out_dir, "Output directory (default: <run>/export)");

  auto* metrics = app.add_subcommand("metrics", "Print metrics and the budget curve");
  std::string curve_out;
  metrics->add_option("--curve-out", curve_out, "Write the budget curve CSV here");

  auto* gap = app.add_subcommand("gap-experiment", "Parameter gap vs N on synthetic softmax regression");
  std::vector<int> sizes{250, 500, 1000, 2000, 4000};
  std::vector<std::string> rules{"threshold"};
  int n_seeds = 20;
  std::uint64_t first_seed = 1;
  act::GapTrialConfig gcfg;
  act::GapGeneratorConfig gen;
  std::string gap_out;
  gap->add_option("--sizes", sizes)->delimiter(',')->capture_default_str();
  gap->add_option("--rules", rules)->delimiter(',')->capture_default_str();
  gap->add_option("--seeds", n_seeds, "Seeds per (N, rule)")->capture_default_str();
  gap->add_option("--first-seed", first_seed)->capture_default_str();
  gap->add_option("--b", gcfg.proportion, "Budget proportion")->capture_default_str();
  gap->add_option("--mu", gcfg.mu, "L2 coefficient")->capture_default_str();
  gap->add_option("--p", gcfg.p, "Bound failure probability")->capture_default_str();
  gap->add_option("--gap-beta", gcfg.beta)->capture_default_str();
  gap->add_option("--noise-rate", gen.noise_rate)->capture_default_str();
  gap->add_option("--out", gap_out, "CSV output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run_cmd) return run_until(o, std::nullopt);
    if (*annotate) return run_until(o, act::Stage::annotated);
    if (*criticize) return run_until(o, act::Stage::criticized);
    if (*sample) return run_until(o, act::Stage::sampled);
    if (*train) {
      o.cfg.train = true;
      return run_until(o, act::Stage::trained);
    }
    if (*serve) {
      act::ReviewServer server(o.cfg.workspace, static_dir.empty() ? std::nullopt
                                                                   : std::optional<act::fs::path>(static_dir));
      std::cerr << "serving " << o.cfg.workspace << " on http://" << host << ":" << port << "\n";
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
        return 1;
      }
      return 0;
    }
    if (*import) {
      auto run = act::PipelineRun::open(finish(o));
      while (run.stage() < act::Stage::reviewing && run.step()) {
      }
      try {
        run.import_reviews(import_file, hook_for(o));
      } catch (const Halt&) {
      }
      print_state(run.state(), run.dir());
      return 0;
    }
    if (*export_cmd) {
      auto run = act::PipelineRun::open(finish(o));
      const auto dir = out_dir.empty() ? run.dir() / "export" : act::fs::path(out_dir);
      run.export_run().write_to(dir);
      std::cout << dir.string() << "\n";
      return 0;
    }
    if (*metrics) {
      auto run = act::PipelineRun::open(finish(o));
      std::cout << run.metrics().dump(2) << "\n";
      if (!curve_out.empty()) {
        const auto csv = run.export_run().budget_curve_csv;
        if (csv.empty()) throw act::PreconditionError("this run has no budget curve");
        act::jsonl::write_atomic(curve_out, csv);
      }
      return 0;
    }
    if (*gap) {
      std::vector<act::SamplingRule> rs;
      for (const auto& r : rules) rs.push_back(act::sampling_rule_from_string(r));
      const auto trials =
          act::gap_experiment(gen, sizes, rs, seed_list(first_seed, n_seeds), gcfg, o.cfg.parallelism);
      const std::string csv = act::gap_csv(trials);
      if (gap_out.empty()) std::cout << csv;
      else act::jsonl::write_atomic(gap_out, csv);
      for (const auto& row : act::summarize_gaps(trials))
        std::cerr << "N=" << row.n << " rule=" << act::to_string(row.rule) << " mean_gap=" << row.mean_gap
                  << " mean_bound=" << row.mean_bound << " violations=" << row.violation_fraction << "\n";
      return 0;
    }
  } catch (const act::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

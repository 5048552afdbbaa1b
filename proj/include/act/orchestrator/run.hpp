#pragma once

// Pipeline state machine. Every stage persists its artifact (write to a
// temporary file, then rename) before the manifest records the stage as
// complete, so a rerun after a crash resumes from the last completed stage.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "act/backends/annotate.hpp"
#include "act/backends/http_backend.hpp"
#include "act/backends/simulator.hpp"
#include "act/core/correction.hpp"
#include "act/core/jsonl.hpp"
#include "act/error.hpp"
#include "act/metrics/quality.hpp"
#include "act/orchestrator/config.hpp"
#include "act/sampling/plan.hpp"
#include "act/trainer/softmax.hpp"

namespace act {

namespace fs = std::filesystem;

enum class Stage { created, annotated, criticized, sampled, reviewing, corrected, trained };

NLOHMANN_JSON_SERIALIZE_ENUM(Stage, {{Stage::created, "created"},
                                     {Stage::annotated, "annotated"},
                                     {Stage::criticized, "criticized"},
                                     {Stage::sampled, "sampled"},
                                     {Stage::reviewing, "reviewing"},
                                     {Stage::corrected, "corrected"},
                                     {Stage::trained, "trained"}})

inline std::string to_string(Stage s) { return json(s).get<std::string>(); }

inline Stage stage_from_string(const std::string& s) {
  const auto v = json(s).get<Stage>();
  if (to_string(v) != s) throw ParseError("unknown stage '" + s + "'");
  return v;
}

struct Manifest {
  std::string run_id;
  std::string config_hash;
  std::uint64_t seed = 0;
  Stage stage = Stage::created;
  std::vector<std::string> completed;
  int n_items = 0;
  int budget = 0;
  int budget_consumed = 0;
};

inline void to_json(json& j, const Manifest& m) {
  j = json{{"schema_version", kSchemaVersion}, {"run_id", m.run_id},   {"config_hash", m.config_hash},
           {"seed", m.seed},                   {"stage", m.stage},     {"completed", m.completed},
           {"n_items", m.n_items},             {"budget", m.budget},   {"budget_consumed", m.budget_consumed}};
}

inline void from_json(const json& j, Manifest& m) {
  detail::check_schema(j);
  m.run_id = j.at("run_id").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.stage = j.at("stage").get<Stage>();
  m.completed = j.at("completed").get<std::vector<std::string>>();
  m.n_items = j.at("n_items").get<int>();
  m.budget = j.at("budget").get<int>();
  m.budget_consumed = j.at("budget_consumed").get<int>();
}

struct RunState {
  std::string run_id;
  Stage stage = Stage::created;
  int n_items = 0;
  int budget = 0;
  int budget_consumed = 0;
  int pending = 0;
};

inline void to_json(json& j, const RunState& s) {
  j = json{{"run_id", s.run_id},   {"stage", s.stage},
           {"n_items", s.n_items}, {"budget", s.budget},
           {"budget_consumed", s.budget_consumed}, {"pending", s.pending}};
}

struct QueueItem {
  int item_id = 0;
  Content content;
  std::vector<std::string> label_space;
  Label machine_label = kNoLabel;
  std::string machine_label_name;
  std::optional<double> error_probability;
  std::optional<std::string> criticism_reasoning;
  std::optional<std::string> annotation_reasoning;
};

struct QueuePage {
  std::vector<QueueItem> items;
  int page = 1;
  int page_size = 20;
  int total = 0;
  RunState state;
};

inline void to_json(json& j, const QueueItem& q) {
  j = json{{"item_id", q.item_id},
           {"content", q.content},
           {"label_space", q.label_space},
           {"machine_label", q.machine_label},
           {"machine_label_name", q.machine_label_name},
           {"error_probability", q.error_probability ? json(*q.error_probability) : json(nullptr)}};
  detail::put_optional(j, "criticism_reasoning", q.criticism_reasoning);
  detail::put_optional(j, "annotation_reasoning", q.annotation_reasoning);
}

inline void to_json(json& j, const QueuePage& p) {
  j = json{{"items", p.items}, {"page", p.page}, {"page_size", p.page_size}, {"total", p.total}, {"state", p.state}};
}

/// Files that make up an export, as bytes.
struct ExportBundle {
  std::string corrected_jsonl;
  std::string metrics_json;
  std::string budget_curve_csv;

  void write_to(const fs::path& dir) const {
    jsonl::write_atomic(dir / "corrected.jsonl", corrected_jsonl);
    jsonl::write_atomic(dir / "metrics.json", metrics_json);
    if (!budget_curve_csv.empty()) jsonl::write_atomic(dir / "budget_curve.csv", budget_curve_csv);
  }

  bool operator==(const ExportBundle&) const = default;
};

/// Builds the chat backend for a role: the seeded simulator for
/// "simulated", an HTTP client otherwise.
inline std::unique_ptr<ChatBackend> make_backend(const BackendConfig& cfg, const Dataset& ds,
                                                 const SimulatorConfig& sim) {
  if (cfg.simulated()) return std::make_unique<SimulatedChatBackend>(ds, sim, true);
  return std::make_unique<HttpBackend>(cfg);
}

/// Metrics for a corrected dataset. Reference labels are the review where
/// one exists, else hidden_truth; items with neither are left out.
inline json compute_metrics(const Dataset& ds, const CorrectedDataset& corrected,
                            const std::vector<CriticismRecord>& criticisms, const PipelineConfig& cfg,
                            int budget, bool with_curve, std::string* curve_csv = nullptr) {
  std::vector<Label> ref, machine, fixed;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& e = corrected.entries[i];
    const std::optional<Label> r = e.human_label ? e.human_label : ds[i].hidden_truth;
    if (!r) continue;
    ref.push_back(*r);
    machine.push_back(e.machine_label);
    fixed.push_back(e.final_label);
  }
  int consumed = 0;
  for (const auto& e : corrected.entries) consumed += e.delta;
  json m{{"schema_version", kSchemaVersion},
         {"n_items", ds.size()},
         {"evaluated_items", ref.size()},
         {"budget", budget},
         {"budget_consumed", consumed},
         {"rule", cfg.rule},
         {"seed", cfg.seed}};
  if (ref.empty()) {
    m["note"] = "no reference labels available";
    return m;
  }
  m["quality_machine"] = quality(ref, machine);
  m["quality_corrected"] = quality(ref, fixed);
  const AqgValue v = aqg(ref, machine, fixed);
  m["aqg"] = v.value;
  m["aqg_degenerate"] = v.degenerate;
  if (with_curve) {
    if (ref.size() != ds.size()) {
      m["budget_curve_note"] = "skipped: some items have no reference label";
    } else {
      AbsOptions opt;
      opt.rule = cfg.rule;
      opt.beta = cfg.beta;
      opt.mode = cfg.mode;
      opt.seed = cfg.seed;
      opt.parallelism = 1;
      const BudgetCurve curve = abs_metric(ref, machine, std::span<const CriticismRecord>(criticisms), opt);
      m["abs"] = curve.abs;
      m["abs_integral"] = curve.abs_integral;
      m["abs_stride"] = curve.stride;
      if (curve_csv) *curve_csv = curve.to_csv();
    }
  }
  return m;
}

class PipelineRun {
 public:
  /// Called after each committed step with "stage:<name>" or "review:<k>".
  using Hook = std::function<void(const std::string&)>;

  /// Creates the run directory, or reopens it when the same configuration
  /// was used before.
  static PipelineRun open(PipelineConfig cfg) {
    cfg.validate();
    PipelineRun r;
    r.cfg_ = std::move(cfg);
    r.dir_ = fs::path(r.cfg_.workspace) / resolve_run_id(r.cfg_);
    const std::string hash = config_hash(r.cfg_);
    if (fs::exists(r.dir_ / "manifest.json")) {
      r.manifest_ = json::parse(jsonl::read_file(r.dir_ / "manifest.json")).get<Manifest>();
      if (r.manifest_.config_hash != hash)
        throw ValidationError("run " + r.manifest_.run_id + " exists with a different configuration");
      r.ds_ = load_dataset(r.dir_ / "dataset.jsonl");
      r.sync_consumed();
      return r;
    }
    Dataset source = load_dataset(r.cfg_.dataset);
    std::vector<Item> items = source.items();
    const fs::path base = fs::absolute(r.cfg_.dataset).parent_path();
    for (Item& it : items)
      if (!it.content.image_path.empty() && fs::path(it.content.image_path).is_relative() &&
          it.content.image_path.find("://") == std::string::npos)
        it.content.image_path = (base / it.content.image_path).lexically_normal().string();
    r.ds_ = Dataset(std::move(items));
    fs::create_directories(r.dir_);
    save_dataset(r.dir_ / "dataset.jsonl", r.ds_);
    jsonl::write_atomic(r.dir_ / "config.json", json(r.cfg_).dump(2) + "\n");
    r.manifest_.run_id = resolve_run_id(r.cfg_);
    r.manifest_.config_hash = hash;
    r.manifest_.seed = r.cfg_.seed;
    r.manifest_.n_items = static_cast<int>(r.ds_.size());
    r.manifest_.budget = r.cfg_.resolve_budget(r.ds_.size());
    r.save_manifest();
    return r;
  }

  /// Reopens an existing run directory.
  static PipelineRun load(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) throw NotFoundError("no run at " + dir.string());
    PipelineRun r;
    r.dir_ = dir;
    r.cfg_ = json::parse(jsonl::read_file(dir / "config.json")).get<PipelineConfig>();
    r.manifest_ = json::parse(jsonl::read_file(dir / "manifest.json")).get<Manifest>();
    r.ds_ = load_dataset(dir / "dataset.jsonl");
    r.sync_consumed();
    return r;
  }

  const fs::path& dir() const { return dir_; }
  const PipelineConfig& config() const { return cfg_; }
  const Manifest& manifest() const { return manifest_; }
  const Dataset& dataset() const { return ds_; }
  Stage stage() const { return manifest_.stage; }

  RunState state() const {
    RunState s;
    s.run_id = manifest_.run_id;
    s.stage = manifest_.stage;
    s.n_items = manifest_.n_items;
    s.budget = manifest_.budget;
    s.budget_consumed = manifest_.budget_consumed;
    if (manifest_.stage == Stage::reviewing) s.pending = static_cast<int>(pending_ids().size());
    return s;
  }

  std::vector<AnnotationRecord> annotations() const {
    return jsonl::read<AnnotationRecord>(dir_ / "annotations.jsonl");
  }
  std::vector<CriticismRecord> criticisms() const {
    return jsonl::read<CriticismRecord>(dir_ / "criticisms.jsonl");
  }
  SamplingPlan plan() const {
    return json::parse(jsonl::read_file(dir_ / "sampling_plan.json")).get<SamplingPlan>();
  }
  std::vector<ReviewRecord> reviews() const {
    if (!fs::exists(dir_ / "reviews.jsonl")) return {};
    return jsonl::read<ReviewRecord>(dir_ / "reviews.jsonl");
  }
  CorrectedDataset corrected() const { return load_corrected(dir_ / "corrected.jsonl"); }

  /// Executes the next stage. Returns false when the run is finished or is
  /// waiting for human reviews.
  bool step(const Hook& hook = {}) {
    switch (manifest_.stage) {
      case Stage::created: do_annotate(); break;
      case Stage::annotated: do_criticize(); break;
      case Stage::criticized: do_sample(); break;
      case Stage::sampled: do_open_review(hook); break;
      case Stage::reviewing:
        if (!do_review(hook)) return false;
        break;
      case Stage::corrected:
        if (!cfg_.train) return false;
        do_train();
        break;
      case Stage::trained: return false;
    }
    if (hook) hook("stage:" + to_string(manifest_.stage));
    return true;
  }

  /// Runs stages until the run finishes or blocks on human review.
  RunState run(const Hook& hook = {}) {
    while (step(hook)) {
    }
    return state();
  }

  /// Pending review items, most suspicious first (ties by item id). Pages
  /// are numbered from 1.
  QueuePage queue(int page = 1, int page_size = 20) {
    if (page < 1 || page_size < 1) throw ValidationError("page and page_size must be >= 1");
    if (manifest_.stage < Stage::sampled) throw StageError("run has not been sampled yet");
    QueuePage out;
    out.page = page;
    out.page_size = page_size;
    if (manifest_.stage == Stage::sampled) do_open_review({});
    const auto ids = pending_ids();
    out.total = static_cast<int>(ids.size());
    if (manifest_.stage == Stage::reviewing && ids.empty()) finish_review();
    const auto anns = annotations();
    const auto crits = criticisms();
    const std::size_t start = static_cast<std::size_t>(page - 1) * static_cast<std::size_t>(page_size);
    for (std::size_t k = start; k < ids.size() && k < start + static_cast<std::size_t>(page_size); ++k) {
      const int id = ids[k];
      const Item& it = ds_.at(id);
      const auto& a = anns[static_cast<std::size_t>(id)];
      const auto& c = crits[static_cast<std::size_t>(id)];
      QueueItem q;
      q.item_id = id;
      q.content = it.content;
      q.label_space = it.label_space;
      q.machine_label = a.machine_label;
      if (it.valid_label(a.machine_label)) q.machine_label_name = it.label_space[static_cast<std::size_t>(a.machine_label)];
      q.error_probability = c.error_probability;
      q.criticism_reasoning = c.reasoning;
      q.annotation_reasoning = a.reasoning;
      out.items.push_back(std::move(q));
    }
    out.state = state();
    return out;
  }

  /// Records one human label. The first submission for an item wins.
  RunState submit_review(int item_id, Label label, const std::string& reviewer,
                         std::optional<std::int64_t> timestamp = std::nullopt, const Hook& hook = {}) {
    if (manifest_.stage == Stage::sampled) do_open_review({});
    if (manifest_.stage != Stage::reviewing)
      throw StageError("run " + manifest_.run_id + " is not accepting reviews (stage " +
                       to_string(manifest_.stage) + ")");
    const Item& it = ds_.at(item_id);
    const auto plan_delta = plan().delta;
    if (!plan_delta[static_cast<std::size_t>(item_id)])
      throw ValidationError("item " + std::to_string(item_id) + " was not selected for review");
    const auto existing = reviews();
    for (const auto& r : existing)
      if (r.item_id == item_id) throw ConflictError("item " + std::to_string(item_id) + " was already reviewed");
    if (!it.valid_label(label))
      throw ValidationError("label " + std::to_string(label) + " outside the label space of item " +
                            std::to_string(item_id));
    if (static_cast<int>(existing.size()) >= manifest_.budget)
      throw ValidationError("review budget exhausted");
    ReviewRecord rec;
    rec.item_id = item_id;
    rec.human_label = label;
    rec.reviewer_id = reviewer;
    rec.timestamp = timestamp ? *timestamp
                              : std::chrono::duration_cast<std::chrono::seconds>(
                                    std::chrono::system_clock::now().time_since_epoch())
                                    .count();
    rec.hidden_truth = it.hidden_truth;
    jsonl::append(dir_ / "reviews.jsonl", json(rec));
    manifest_.budget_consumed = static_cast<int>(existing.size()) + 1;
    save_manifest();
    if (hook) hook("review:" + std::to_string(manifest_.budget_consumed));
    if (pending_ids().empty()) finish_review();
    return state();
  }

  /// Applies reviews from a JSONL file produced elsewhere.
  RunState import_reviews(const fs::path& file, const Hook& hook = {}) {
    for (const auto& r : jsonl::read<ReviewRecord>(file)) {
      std::optional<std::int64_t> ts;
      if (r.timestamp != 0) ts = r.timestamp;
      else ts = manifest_.budget_consumed + 1;
      submit_review(r.item_id, r.human_label, r.reviewer_id.empty() ? "import" : r.reviewer_id, ts, hook);
    }
    return state();
  }

  ExportBundle export_run() const {
    if (manifest_.stage < Stage::corrected)
      throw StageError("run " + manifest_.run_id + " is at stage " + to_string(manifest_.stage) +
                       "; export needs a corrected run");
    ExportBundle b;
    b.corrected_jsonl = jsonl::read_file(dir_ / "corrected.jsonl");
    b.metrics_json = jsonl::read_file(dir_ / "metrics.json");
    if (fs::exists(dir_ / "budget_curve.csv")) b.budget_curve_csv = jsonl::read_file(dir_ / "budget_curve.csv");
    return b;
  }

  json metrics() const {
    if (manifest_.stage < Stage::corrected) throw StageError("metrics need a corrected run");
    return json::parse(jsonl::read_file(dir_ / "metrics.json"));
  }

 private:
  PipelineRun() = default;

  void save_manifest() { jsonl::write_atomic(dir_ / "manifest.json", json(manifest_).dump(2) + "\n"); }

  void complete(Stage s) {
    manifest_.stage = s;
    manifest_.completed.push_back(to_string(s));
    save_manifest();
  }

  void sync_consumed() {
    const int n = static_cast<int>(reviews().size());
    if (n != manifest_.budget_consumed) {
      manifest_.budget_consumed = n;
      save_manifest();
    }
  }

  PromptLibrary prompts() const { return PromptLibrary::load(); }

  void do_annotate() {
    auto backend = make_backend(cfg_.annotator, ds_, cfg_.effective_simulator());
    const auto lib = prompts();
    jsonl::write(dir_ / "annotations.jsonl",
                 annotate_all(ds_, cfg_.annotation_strategy, *backend, lib, cfg_.parallelism));
    complete(Stage::annotated);
  }

  void do_criticize() {
    auto backend = make_backend(cfg_.critic, ds_, cfg_.effective_simulator());
    const auto lib = prompts();
    auto crits = criticize_all(ds_, annotations(), cfg_.critic_strategy, *backend, lib, cfg_.parallelism);
    for (const auto& c : crits) validate(c);
    jsonl::write(dir_ / "criticisms.jsonl", crits);
    complete(Stage::criticized);
  }

  void do_sample() {
    const auto crits = criticisms();
    const SamplingPlan p = plan_sampling(std::span<const CriticismRecord>(crits),
                                         {cfg_.rule, manifest_.budget, cfg_.beta, cfg_.mode, cfg_.seed});
    jsonl::write_atomic(dir_ / "sampling_plan.json", json(p).dump() + "\n");
    std::string rows;
    for (const auto& r : plan_rows(p, crits)) rows += r.dump() + "\n";
    jsonl::write_atomic(dir_ / "sampling.jsonl", rows);
    complete(Stage::sampled);
  }

  void do_open_review(const Hook&) {
    if (!fs::exists(dir_ / "reviews.jsonl")) jsonl::write_atomic(dir_ / "reviews.jsonl", "");
    complete(Stage::reviewing);
  }

  /// Returns false when the run must wait for reviewers.
  bool do_review(const Hook& hook) {
    if (pending_ids().empty()) {
      finish_review();
      return true;
    }
    switch (cfg_.review_mode) {
      case ReviewMode::interactive: return false;
      case ReviewMode::import_file:
        import_reviews(cfg_.reviews_file, hook);
        return manifest_.stage != Stage::reviewing;
      case ReviewMode::simulated_oracle:
        for (int id : pending_ids()) {
          const Item& it = ds_.at(id);
          if (!it.hidden_truth)
            throw PreconditionError("simulated review needs hidden_truth (item " + std::to_string(id) + ")");
          submit_review(id, *it.hidden_truth, cfg_.reviewer, manifest_.budget_consumed + 1, hook);
        }
        return true;
    }
    return false;
  }

  void finish_review() {
    const auto anns = annotations();
    const auto crits = criticisms();
    const SamplingPlan p = plan();
    CarryForward carry;
    carry.pi = p.pi;
    bool all_eps = true;
    for (const auto& c : crits) {
      carry.error_probability.push_back(c.error_probability.value_or(0.0));
      all_eps = all_eps && c.error_probability.has_value();
    }
    if (!all_eps) carry.error_probability.clear();
    const CorrectedDataset corr = apply_correction(anns, p.delta, reviews(), &carry);
    std::string csv;
    const json m = compute_metrics(ds_, corr, crits, cfg_, manifest_.budget, cfg_.budget_curve, &csv);
    save_corrected(dir_ / "corrected.jsonl", corr);
    jsonl::write_atomic(dir_ / "metrics.json", m.dump(2) + "\n");
    if (!csv.empty()) jsonl::write_atomic(dir_ / "budget_curve.csv", csv);
    complete(Stage::corrected);
  }

  void do_train() {
    EmbeddingTable table;
    if (!cfg_.embeddings.empty()) table = load_embeddings(cfg_.embeddings);
    const TrainingSet t = training_set(ds_, corrected(), cfg_.embeddings.empty() ? nullptr : &table);
    const SamplingPlan p = plan();
    TrainConfig tc;
    tc.l2 = cfg_.l2;
    tc.epochs = cfg_.epochs;
    tc.loss = cfg_.train_loss;
    tc.seed = cfg_.seed;
    tc.act.rule = cfg_.rule;
    tc.act.lambda = cfg_.lambda;
    tc.act.alpha = p.alpha;
    tc.act.beta = p.beta;
    tc.act.budget = manifest_.budget;
    const TrainResult res = train(t, tc);
    json out = res.params;
    out["loss"] = cfg_.train_loss;
    out["steps"] = res.steps;
    out["objective"] = res.objective.back();
    out["gradient_norm"] = res.gradient_norm;
    jsonl::write_atomic(dir_ / "model.json", out.dump(2) + "\n");
    complete(Stage::trained);
  }

  /// Items selected for review without a review yet, by descending error
  /// probability, ties by item id.
  std::vector<int> pending_ids() const {
    if (manifest_.stage < Stage::sampled) return {};
    const auto delta = plan().delta;
    std::set<int> done;
    for (const auto& r : reviews()) done.insert(r.item_id);
    const auto crits = criticisms();
    std::vector<int> ids;
    for (std::size_t i = 0; i < delta.size(); ++i)
      if (delta[i] && !done.contains(static_cast<int>(i))) ids.push_back(static_cast<int>(i));
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
      const double ea = crits[static_cast<std::size_t>(a)].error_probability.value_or(-1.0);
      const double eb = crits[static_cast<std::size_t>(b)].error_probability.value_or(-1.0);
      if (ea != eb) return ea > eb;
      return a < b;
    });
    return ids;
  }

  PipelineConfig cfg_;
  fs::path dir_;
  Manifest manifest_;
  Dataset ds_;
};

/// Runs (or resumes) the configured pipeline.
inline RunState run_pipeline(const PipelineConfig& cfg, const PipelineRun::Hook& hook = {}) {
  auto run = PipelineRun::open(cfg);
  return run.run(hook);
}

}  // namespace act

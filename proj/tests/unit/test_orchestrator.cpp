#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "helpers.hpp"

using namespace act;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path root;
  fs::path data;
};

Fixture make_data(const std::string& tag, int n, int k = 3) {
  Fixture f;
  f.root = testutil::temp_dir(tag);
  f.data = f.root / "data.jsonl";
  save_dataset(f.data, testutil::text_dataset(n, k));
  return f;
}

PipelineConfig config(const Fixture& f, int budget, double accuracy = 0.7) {
  PipelineConfig c;
  c.dataset = f.data.string();
  c.workspace = (f.root / "runs").string();
  c.run_id = "r";
  c.budget = budget;
  c.simulator.annotator_accuracy = accuracy;
  c.parallelism = 2;
  return c;
}

std::string slurp(const fs::path& p) { return jsonl::read_file(p); }

void write_criticisms(const fs::path& dir, const std::vector<double>& eps) {
  std::vector<CriticismRecord> crits;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CriticismRecord c;
    c.item_id = static_cast<int>(i);
    c.error_probability = eps[i];
    crits.push_back(c);
  }
  jsonl::write(dir / "criticisms.jsonl", crits);
}

}  // namespace

TEST(Pipeline, PerfectCriticizerFixesEveryError) {
  const auto f = make_data("perfect", 1000);
  auto c = config(f, 0, 0.85);
  c.budget.reset();
  c.proportion = 0.2;
  c.simulator.perfect_criticizer = true;
  const RunState s = run_pipeline(c);
  EXPECT_EQ(s.stage, Stage::corrected);
  EXPECT_EQ(s.budget, 200);
  const auto run = PipelineRun::load(fs::path(c.workspace) / "r");
  const json m = run.metrics();
  EXPECT_LT(m.at("quality_machine").get<double>(), 0.9);
  EXPECT_EQ(m.at("quality_corrected").get<double>(), 1.0);
  EXPECT_EQ(m.at("aqg").get<double>(), 1.0);
  EXPECT_EQ(s.budget_consumed, 200);
}

TEST(Pipeline, InteractiveWaitsForReviewers) {
  const auto f = make_data("interactive", 30);
  auto c = config(f, 6);
  c.review_mode = ReviewMode::interactive;
  const RunState s = run_pipeline(c);
  EXPECT_EQ(s.stage, Stage::reviewing);
  auto run = PipelineRun::open(c);
  const auto delta = run.plan().delta;
  EXPECT_EQ(std::accumulate(delta.begin(), delta.end(), 0), 6);
  EXPECT_EQ(run.queue(1, 100).total, 6);
  EXPECT_EQ(s.pending, 6);
  EXPECT_THROW(run.export_run(), StageError);
  EXPECT_THROW(run.metrics(), StageError);
}

TEST(Pipeline, RerunIsNoOp) {
  const auto f = make_data("rerun", 40);
  const auto c = config(f, 8);
  run_pipeline(c);
  const fs::path dir = fs::path(c.workspace) / "r";
  const auto manifest = slurp(dir / "manifest.json");
  const auto corrected = slurp(dir / "corrected.jsonl");
  std::vector<std::string> events;
  run_pipeline(c, [&](const std::string& e) { events.push_back(e); });
  EXPECT_TRUE(events.empty());
  EXPECT_EQ(slurp(dir / "manifest.json"), manifest);
  EXPECT_EQ(slurp(dir / "corrected.jsonl"), corrected);
}

TEST(Pipeline, HashMismatchRejected) {
  const auto f = make_data("hash", 20);
  auto c = config(f, 4);
  run_pipeline(c);
  c.seed = 7;
  EXPECT_THROW(PipelineRun::open(c), ValidationError);
  c.seed = 42;
  c.parallelism = 1;
  c.train = true;
  EXPECT_NO_THROW(PipelineRun::open(c));
}

TEST(Pipeline, TrainingExtendsFinishedRun) {
  const auto f = make_data("train", 60);
  auto ds = testutil::text_dataset(60, 3);
  std::vector<Item> items = ds.items();
  for (auto& it : items) it.features = {static_cast<double>(*it.hidden_truth), 1.0};
  save_dataset(f.data, Dataset(std::move(items)));
  auto c = config(f, 12);
  c.train_loss = LossSelection::act;
  c.epochs = 50;
  EXPECT_EQ(run_pipeline(c).stage, Stage::corrected);
  c.train = true;
  EXPECT_EQ(run_pipeline(c).stage, Stage::trained);
  const json model = json::parse(slurp(fs::path(c.workspace) / "r" / "model.json"));
  EXPECT_EQ(model.at("steps").get<int>(), 50);
  EXPECT_EQ(model.at("loss").get<std::string>(), "act");
}

TEST(Queue, OrderedBySuspicionThenId) {
  const auto f = make_data("order", 4);
  auto c = config(f, 3);
  c.review_mode = ReviewMode::interactive;
  auto run = PipelineRun::open(c);
  run.step();
  run.step();
  write_criticisms(run.dir(), {0.2, 0.9, 0.05, 0.9});
  run.run();
  const QueuePage p = run.queue(1, 10);
  ASSERT_EQ(p.items.size(), 3u);
  EXPECT_EQ(p.items[0].item_id, 1);
  EXPECT_EQ(p.items[1].item_id, 3);
  EXPECT_EQ(p.items[2].item_id, 0);
  EXPECT_EQ(p.items[0].content.text, "item 1");
  EXPECT_EQ(p.items[0].label_space.size(), 3u);

  const QueuePage second = run.queue(2, 2);
  ASSERT_EQ(second.items.size(), 1u);
  EXPECT_EQ(second.items[0].item_id, 0);
  const QueuePage past = run.queue(5, 2);
  EXPECT_TRUE(past.items.empty());
  EXPECT_EQ(past.total, 3);
  EXPECT_THROW(run.queue(0, 2), ValidationError);
}

TEST(Queue, EmptyQueueFinishesReview) {
  const auto f = make_data("empty", 10);
  auto c = config(f, 0);
  c.review_mode = ReviewMode::interactive;
  auto run = PipelineRun::open(c);
  for (int k = 0; k < 3; ++k) run.step();
  EXPECT_EQ(run.stage(), Stage::sampled);
  const QueuePage p = run.queue();
  EXPECT_EQ(p.total, 0);
  EXPECT_EQ(run.stage(), Stage::corrected);
  EXPECT_EQ(run.corrected().size(), 10u);
}

TEST(Review, SubmitLifecycle) {
  const auto f = make_data("submit", 5);
  auto c = config(f, 2);
  c.review_mode = ReviewMode::interactive;
  auto run = PipelineRun::open(c);
  run.step();
  run.step();
  write_criticisms(run.dir(), {0.1, 0.8, 0.3, 0.7, 0.2});
  run.run();
  ASSERT_EQ(run.queue().total, 2);

  EXPECT_THROW(run.submit_review(0, 0, "ann"), ValidationError);  // not selected
  EXPECT_THROW(run.submit_review(1, 7, "ann"), ValidationError);  // outside label space
  EXPECT_THROW(run.submit_review(99, 0, "ann"), NotFoundError);

  RunState s = run.submit_review(1, 2, "ann", 100);
  EXPECT_EQ(s.pending, 1);
  EXPECT_EQ(s.budget_consumed, 1);
  EXPECT_EQ(run.queue().total, 1);
  EXPECT_THROW(run.submit_review(1, 0, "other"), ConflictError);
  EXPECT_FALSE(fs::exists(run.dir() / "corrected.jsonl"));

  s = run.submit_review(3, 0, "ann", 101);
  EXPECT_EQ(s.stage, Stage::corrected);
  EXPECT_EQ(s.budget_consumed, 2);
  EXPECT_THROW(run.submit_review(3, 1, "ann"), StageError);

  const auto corr = run.corrected();
  EXPECT_EQ(corr.entries[1].final_label, 2);
  EXPECT_EQ(corr.entries[1].source, LabelSource::human);
  EXPECT_EQ(corr.entries[3].final_label, 0);
  EXPECT_EQ(corr.entries[0].source, LabelSource::machine);
  EXPECT_EQ(run.reviews().size(), 2u);
  EXPECT_EQ(run.reviews()[0].reviewer_id, "ann");
  EXPECT_EQ(run.reviews()[0].timestamp, 100);

  // A fresh load agrees with the in-memory state.
  EXPECT_EQ(PipelineRun::load(run.dir()).state().budget_consumed, 2);
}

TEST(Review, HooksReportEveryCommit) {
  const auto f = make_data("hooks", 12);
  const auto c = config(f, 3);
  std::vector<std::string> events;
  run_pipeline(c, [&](const std::string& e) { events.push_back(e); });
  const std::vector<std::string> want{"stage:annotated", "stage:criticized", "stage:sampled", "stage:reviewing",
                                      "review:1",        "review:2",         "review:3",      "stage:corrected"};
  EXPECT_EQ(events, want);
}

TEST(Review, ImportMatchesOracle) {
  const auto f = make_data("import", 50);
  const auto oracle_cfg = config(f, 10);
  run_pipeline(oracle_cfg);
  const auto oracle = PipelineRun::load(fs::path(oracle_cfg.workspace) / "r");

  auto c = oracle_cfg;
  c.run_id = "imported";
  c.review_mode = ReviewMode::import_file;
  c.reviews_file = (f.root / "reviews.jsonl").string();
  std::string lines;
  for (auto r : oracle.reviews()) {
    r.timestamp = 0;
    lines += json(r).dump() + "\n";
  }
  jsonl::write_atomic(c.reviews_file, lines);
  EXPECT_EQ(run_pipeline(c).stage, Stage::corrected);
  const auto imported = PipelineRun::load(fs::path(c.workspace) / "imported");
  EXPECT_EQ(imported.corrected().final_labels(), oracle.corrected().final_labels());
  EXPECT_EQ(imported.reviews().size(), 10u);
}

TEST(Export, BundlesAreReproducible) {
  const auto a = make_data("export_a", 80);
  const auto b = make_data("export_b", 80);
  const auto ca = config(a, 16), cb = config(b, 16);
  run_pipeline(ca);
  run_pipeline(cb);
  const auto ra = PipelineRun::load(fs::path(ca.workspace) / "r");
  const auto rb = PipelineRun::load(fs::path(cb.workspace) / "r");
  const ExportBundle ea = ra.export_run();
  EXPECT_TRUE(ea == rb.export_run());
  EXPECT_FALSE(ea.budget_curve_csv.empty());
  ea.write_to(a.root / "out");
  EXPECT_EQ(slurp(a.root / "out" / "corrected.jsonl"), ea.corrected_jsonl);

  // Metrics agree with a recomputation from the corrected file.
  const auto corr = ra.corrected();
  std::vector<Label> truth, machine, fixed;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    truth.push_back(*ra.dataset()[i].hidden_truth);
    machine.push_back(corr.entries[i].machine_label);
    fixed.push_back(corr.entries[i].final_label);
  }
  const json m = ra.metrics();
  EXPECT_DOUBLE_EQ(m.at("aqg").get<double>(), aqg(truth, machine, fixed).value);
  EXPECT_DOUBLE_EQ(m.at("quality_corrected").get<double>(), quality(truth, fixed));
  EXPECT_EQ(m.at("budget_consumed").get<int>(), 16);
  EXPECT_EQ(m.at("budget_consumed").get<int>(), static_cast<int>(ra.reviews().size()));
}

TEST(Export, MatchesManualComposition) {
  const auto f = make_data("manual", 60);
  const auto c = config(f, 15);
  run_pipeline(c);
  const auto run = PipelineRun::load(fs::path(c.workspace) / "r");

  const Dataset ds = load_dataset(f.data);
  SimulatedChatBackend annotator(ds, c.effective_simulator(), true), critic(ds, c.effective_simulator(), true);
  const auto lib = PromptLibrary::load();
  const auto anns = annotate_all(ds, c.annotation_strategy, annotator, lib, 1);
  const auto crits = criticize_all(ds, anns, c.critic_strategy, critic, lib, 1);
  const auto plan = plan_sampling(std::span<const CriticismRecord>(crits), {c.rule, 15, c.beta, c.mode, c.seed});
  std::vector<ReviewRecord> reviews;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (plan.delta[i]) reviews.push_back({static_cast<int>(i), *ds[i].hidden_truth, "oracle", 0, ds[i].hidden_truth});
  CarryForward carry;
  carry.pi = plan.pi;
  for (const auto& cr : crits) carry.error_probability.push_back(*cr.error_probability);
  const auto manual = apply_correction(anns, plan.delta, reviews, &carry);
  EXPECT_EQ(manual, run.corrected());
  EXPECT_EQ(anns, run.annotations());
  EXPECT_EQ(crits, run.criticisms());
}

// ---- HTTP API ----

namespace {

class ApiTest : public ::testing::Test {
 protected:
  void SetUp() override {
    f_ = make_data("api", 6);
    // Item 5 is an image so the content route can serve bytes.
    std::vector<Item> items = testutil::text_dataset(6, 3).items();
    std::ofstream(f_.root / "pic.png", std::ios::binary) << std::string("\x89PNG\r\n\x1a\nfake", 12);
    items[5].content = Content::from_image("pic.png");
    save_dataset(f_.data, Dataset(std::move(items)));
    cfg_ = config(f_, 2);
    cfg_.review_mode = ReviewMode::interactive;
    auto run = PipelineRun::open(cfg_);
    run.step();
    run.step();
    write_criticisms(run.dir(), {0.1, 0.8, 0.3, 0.7, 0.2, 0.0});
    run.run();

    server_ = std::make_unique<ReviewServer>(cfg_.workspace);
    port_ = server_->bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  httplib::Result post_review(const json& body) {
    return client_->Post("/runs/r/reviews", body.dump(), "application/json");
  }

  Fixture f_;
  PipelineConfig cfg_;
  std::unique_ptr<ReviewServer> server_;
  std::thread thread_;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST_F(ApiTest, ListsAndDescribesRuns) {
  auto res = client_->Get("/runs");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const json list = json::parse(res->body);
  ASSERT_EQ(list.at("runs").size(), 1u);
  EXPECT_EQ(list["runs"][0].at("run_id"), "r");
  EXPECT_EQ(list["runs"][0].at("stage"), "reviewing");

  res = client_->Get("/runs/r");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const json body = json::parse(res->body);
  EXPECT_EQ(body.at("state").at("pending"), 2);
  EXPECT_EQ(body.at("config").at("review_mode"), "interactive");

  res = client_->Get("/runs/nope");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  EXPECT_TRUE(json::parse(res->body).contains("error"));
}

TEST_F(ApiTest, QueuePages) {
  auto res = client_->Get("/runs/r/queue?page=1&page_size=1");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  json q = json::parse(res->body);
  EXPECT_EQ(q.at("total"), 2);
  ASSERT_EQ(q.at("items").size(), 1u);
  EXPECT_EQ(q["items"][0].at("item_id"), 1);
  EXPECT_DOUBLE_EQ(q["items"][0].at("error_probability").get<double>(), 0.8);
  EXPECT_EQ(q["items"][0].at("content").at("text"), "item 1");

  res = client_->Get("/runs/r/queue?page=9");
  ASSERT_TRUE(res);
  q = json::parse(res->body);
  EXPECT_TRUE(q.at("items").empty());
  EXPECT_EQ(q.at("total"), 2);

  res = client_->Get("/runs/r/queue?page=abc");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
}

TEST_F(ApiTest, ReviewStatusCodes) {
  auto res = post_review({{"item_id", 1}, {"label", 2}, {"reviewer", "ann"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(json::parse(res->body).at("state").at("pending"), 1);

  res = post_review({{"item_id", 1}, {"label", 0}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 409);

  res = post_review({{"item_id", 3}, {"label", 9}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = post_review({{"item_id", 0}, {"label", 0}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = post_review({{"item_id", 999}, {"label", 0}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  res = client_->Post("/runs/r/reviews", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = post_review({{"item_id", 3}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = client_->Post("/runs/missing/reviews", json{{"item_id", 1}, {"label", 0}}.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  const auto run = PipelineRun::load(fs::path(cfg_.workspace) / "r");
  ASSERT_EQ(run.reviews().size(), 1u);
  EXPECT_EQ(run.reviews()[0].reviewer_id, "ann");
}

TEST_F(ApiTest, ExportAfterLastReview) {
  auto res = client_->Get("/runs/r/export");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 409);

  ASSERT_EQ(post_review({{"item_id", 1}, {"label", 1}})->status, 201);
  res = post_review({{"item_id", 3}, {"label", 0}});
  ASSERT_EQ(res->status, 201);
  EXPECT_EQ(json::parse(res->body).at("state").at("stage"), "corrected");

  res = post_review({{"item_id", 3}, {"label", 0}});
  EXPECT_EQ(res->status, 409);

  res = client_->Get("/runs/r/export");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const json body = json::parse(res->body);
  EXPECT_EQ(body.at("corrected").size(), 6u);
  EXPECT_EQ(body["corrected"][1].at("final_label"), 1);
  EXPECT_TRUE(body.at("metrics").contains("aqg"));
  const fs::path out = fs::path(cfg_.workspace) / "r" / "export";
  EXPECT_TRUE(fs::exists(out / "corrected.jsonl"));
  EXPECT_TRUE(fs::exists(out / "metrics.json"));
  EXPECT_EQ(jsonl::read_file(out / "corrected.jsonl"), PipelineRun::load(fs::path(cfg_.workspace) / "r").export_run().corrected_jsonl);
}

TEST_F(ApiTest, ItemContent) {
  auto res = client_->Get("/items/2/content?run=r");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "item 2");
  EXPECT_EQ(res->get_header_value("Content-Type").rfind("text/plain", 0), 0u);

  res = client_->Get("/items/5/content?run=r");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->body.substr(0, 4), std::string("\x89PNG", 4));

  res = client_->Get("/items/5/content?run=r&format=json");
  ASSERT_TRUE(res);
  const json j = json::parse(res->body);
  EXPECT_EQ(j.at("content").at("kind"), "image");
  EXPECT_TRUE(fs::path(j["content"].at("image").get<std::string>()).is_absolute());

  res = client_->Get("/items/2/content");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = client_->Get("/items/77/content?run=r");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  res = client_->Get("/items/1/content?run=..");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
}

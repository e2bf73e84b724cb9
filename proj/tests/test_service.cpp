#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include "provwatch/cli.hpp"

using namespace provwatch;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "provwatch");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

/// A small scenario, a tiny model and a detected run where every queue is flagged.
class RunFixture : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("provwatch-service-" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string sc = (root / "sc").string();
    ASSERT_EQ(cli_run({"generate-scenario", "--out", sc, "--train-windows", "3", "--validation-windows", "4",
                       "--test-windows", "8", "--events-per-window", "150", "--attack-window", "4"})
                  .code,
              0);
    const std::string model = (root / "m.bin").string();
    auto t = cli_run({"train", "--input", sc + "/train.jsonl", "--out", model, "--epochs", "1", "--state-dim", "8",
                      "--embed-dim", "8", "--neighbors", "3", "--feature-dim", "8", "--time-dim", "4"});
    ASSERT_EQ(t.code, 0) << t.err;
    auto c = cli_run({"calibrate", "--model", model, "--validation", sc + "/validation.jsonl", "--train",
                      sc + "/train.jsonl", "--out", (root / "th.json").string()});
    ASSERT_EQ(c.code, 0) << c.err;
    // β = 0 flags every queue, so the run has summaries to serve
    json th = service::read_json(root / "th.json");
    th["beta"] = 0.0;
    std::ofstream(root / "th0.json") << th.dump();
  }

  static void TearDownTestSuite() { fs::remove_all(root); }

  fs::path fresh_run(const std::string& name) {
    const fs::path run = root / name;
    fs::remove_all(run);
    auto d = cli_run({"detect", "--model", (root / "m.bin").string(), "--thresholds", (root / "th0.json").string(),
                      "--input", (root / "sc/test.jsonl").string(), "--labels", (root / "sc/labels.jsonl").string(),
                      "--out", run.string()});
    EXPECT_EQ(d.code, 0) << d.err;
    return run;
  }
};

fs::path RunFixture::root;

}  // namespace

TEST(Cli, UnknownFlagExitsTwoWithUsage) {
  auto r = cli_run({"generate-scenario", "--out", "unused", "--bogus"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, MissingSubcommandExitsTwo) { EXPECT_EQ(cli_run({}).code, cli::kExitUsage); }

TEST(Cli, HelpExitsZero) {
  auto r = cli_run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"train", "calibrate", "detect", "investigate", "evaluate", "generate-scenario", "retrain-fp", "serve"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, MalformedInputExitsOne) {
  const fs::path bad = fs::temp_directory_path() / "provwatch-bad.jsonl";
  std::ofstream(bad) << "{\"ts\": 1, \"src\": \n";
  auto r = cli_run({"train", "--input", bad.string(), "--out", (fs::temp_directory_path() / "x.bin").string()});
  EXPECT_EQ(r.code, cli::kExitPipeline);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
  fs::remove(bad);
}

TEST_F(RunFixture, DetectWritesTheRunLayout) {
  const fs::path run = fresh_run("layout");
  for (const char* f : {"run.json", "model.bin", "model.json", "thresholds.json", "alerts.jsonl", "queues.json", "windows.jsonl"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_EQ(count_lines(run / "windows.jsonl"), 8u);
  std::size_t dots = 0;
  for (const auto& e : fs::directory_iterator(run / "summaries")) dots += e.path().extension() == ".dot";
  EXPECT_GT(dots, 0u);
  // every alert line has the documented fields
  std::ifstream in(run / "alerts.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    const json a = json::parse(line);
    for (const char* k : {"queue_id", "window_indices", "score", "beta", "suspicious_nodes", "flagged_at_ts"})
      EXPECT_TRUE(a.contains(k)) << k;
  }
}

TEST_F(RunFixture, EvaluateCountsEveryWindowOnce) {
  const fs::path run = fresh_run("eval");
  auto r = cli_run({"evaluate", "--run", run.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = service::read_json(run / "metrics.json");
  EXPECT_EQ(m["tp"].get<int>() + m["tn"].get<int>() + m["fp"].get<int>() + m["fn"].get<int>(), 8);
  auto check = evaluate::metrics_from_counts(m["tp"], m["tn"], m["fp"], m["fn"]);
  EXPECT_EQ(m["precision"].get<double>(), check.precision);
  EXPECT_EQ(m["recall"].get<double>(), check.recall);
  EXPECT_EQ(m["accuracy"].get<double>(), check.accuracy);
  EXPECT_TRUE(fs::exists(run / "confusion.csv"));
}

TEST_F(RunFixture, InvestigateRewritesIdenticalSummaries) {
  const fs::path run = fresh_run("inv");
  std::map<std::string, std::string> before;
  for (const auto& e : fs::directory_iterator(run / "summaries")) before[e.path().filename()] = service::read_file(e.path());
  auto r = cli_run({"investigate", "--run", run.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& [name, text] : before) EXPECT_EQ(service::read_file(run / "summaries" / name), text) << name;
}

TEST_F(RunFixture, EveryFlaggedQueueIsListedOnce) {
  const fs::path run = fresh_run("listing");
  service::Service svc(run);
  const json q = svc.queues();
  EXPECT_EQ(q["v"], 1);
  std::multiset<std::size_t> listed;
  for (const auto& item : q["queues"]) listed.insert(item["id"].get<std::size_t>());
  std::ifstream in(run / "alerts.jsonl");
  std::string line;
  std::size_t alerts = 0;
  while (std::getline(in, line)) {
    ++alerts;
    EXPECT_EQ(listed.count(json::parse(line)["queue_id"].get<std::size_t>()), 1u);
  }
  EXPECT_GT(alerts, 0u);
}

TEST(Service, EmptyRunListsNoQueues) {
  const fs::path run = fs::temp_directory_path() / "provwatch-empty-run";
  fs::remove_all(run);
  EntityCatalog catalog;
  detect::Thresholds th;
  pipeline::DetectionRun empty;
  empty.detector = std::make_unique<detect::Detector>(detect::DetectConfig{}, th, catalog);
  empty.detector->finish();
  service::write_detection({run}, empty, th, {});
  service::Service svc(run);
  EXPECT_EQ(svc.queues()["queues"], json::array());
  EXPECT_EQ(svc.queues()["v"], 1);
  EXPECT_THROW(svc.summary(0), service::NotFound);
  fs::remove_all(run);
}

TEST(Service, RejectsDirectoriesThatAreNotRuns) {
  EXPECT_THROW(service::Service(fs::temp_directory_path() / "provwatch-no-such-run"), PipelineError);
}

TEST_F(RunFixture, VerdictsAreIdempotentAndAppendOnly) {
  const fs::path run = fresh_run("verdicts");
  service::Service svc(run);
  const std::size_t id = svc.queues()["queues"][0]["id"];
  EXPECT_TRUE(svc.verdict(id, {{"verdict", "fp"}, {"analyst", "ana"}})["recorded"].get<bool>());
  EXPECT_FALSE(svc.verdict(id, {{"verdict", "fp"}})["recorded"].get<bool>());
  EXPECT_EQ(count_lines(run / "verdicts.jsonl"), 1u);
  EXPECT_EQ(svc.queues()["queues"][0]["verdict"], "fp");
  EXPECT_TRUE(svc.verdict(id, {{"verdict", "tp"}})["recorded"].get<bool>());
  EXPECT_EQ(count_lines(run / "verdicts.jsonl"), 2u);
  EXPECT_EQ(svc.queues()["queues"][0]["verdict"], "tp");
  // the log survives a restart
  service::Service again(run);
  EXPECT_EQ(again.queues()["queues"][0]["verdict"], "tp");
  const json first = json::parse(service::read_file(run / "verdicts.jsonl").substr(0, service::read_file(run / "verdicts.jsonl").find('\n')));
  for (const char* k : {"queue_id", "verdict", "analyst", "ts"}) EXPECT_TRUE(first.contains(k)) << k;
  EXPECT_EQ(first["analyst"], "ana");
}

TEST_F(RunFixture, HttpErrorsAndPassThrough) {
  const fs::path run = fresh_run("http");
  service::Service svc(run);
  httplib::Server srv;
  service::mount(srv, svc);
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  httplib::Client cl("127.0.0.1", port);

  auto health = cl.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["v"], 1);

  auto queues = cl.Get("/queues");
  ASSERT_TRUE(queues);
  const json q = json::parse(queues->body);
  EXPECT_EQ(q["v"], 1);
  const std::size_t id = q["queues"][0]["id"];

  auto summary = cl.Get("/queues/" + std::to_string(id) + "/summary");
  ASSERT_TRUE(summary);
  EXPECT_EQ(summary->status, 200);
  const json s = json::parse(summary->body);
  ASSERT_FALSE(s["summaries"].empty());
  for (const auto& g : s["summaries"]) {
    const auto file = g["file"].get<std::string>();
    EXPECT_EQ(g["dot"].get<std::string>(), service::read_file(run / "summaries" / file));
    auto raw = cl.Get("/queues/" + std::to_string(id) + "/summary/" + std::to_string(g["rank"].get<int>()) + ".dot");
    ASSERT_TRUE(raw);
    EXPECT_EQ(raw->body, service::read_file(run / "summaries" / file));
  }

  EXPECT_EQ(cl.Get("/queues/9999/summary")->status, 404);
  EXPECT_EQ(cl.Get("/queues/abc/summary")->status, 404);
  EXPECT_EQ(cl.Post("/queues/9999/verdict", R"({"verdict":"fp"})", "application/json")->status, 404);
  auto bad = cl.Post("/queues/" + std::to_string(id) + "/verdict", R"({"verdict":"maybe"})", "application/json");
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["v"], 1);
  EXPECT_EQ(cl.Post("/queues/" + std::to_string(id) + "/verdict", "not json", "application/json")->status, 400);
  EXPECT_EQ(cl.Post("/queues/" + std::to_string(id) + "/verdict", R"(["fp"])", "application/json")->status, 400);
  EXPECT_EQ(cl.Post("/queues/" + std::to_string(id) + "/verdict", R"({"verdict":"fp"})", "application/json")->status, 200);
  auto listed = json::parse(cl.Get("/queues")->body);
  EXPECT_EQ(listed["queues"][0]["verdict"], "fp");

  srv.stop();
  th.join();
}

TEST_F(RunFixture, RetrainWhileRetrainingIsAConflict) {
  const fs::path run = fresh_run("busy");
  std::promise<void> started, release;
  auto release_f = release.get_future().share();
  service::ServiceOptions opts;
  opts.retrain.epochs = 1;
  opts.on_retrain_start = [&] {
    started.set_value();
    release_f.wait();
  };
  service::Service svc(run, opts);
  httplib::Server srv;
  service::mount(srv, svc);
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  auto first = std::async(std::launch::async, [&] {
    httplib::Client cl("127.0.0.1", port);
    cl.set_read_timeout(120, 0);
    return cl.Post("/retrain", "", "application/json")->status;
  });
  started.get_future().wait();
  httplib::Client cl("127.0.0.1", port);
  EXPECT_EQ(cl.Post("/retrain", "", "application/json")->status, 409);
  EXPECT_EQ(cl.Post("/queues/0/verdict", R"({"verdict":"fp"})", "application/json")->status, 409);
  EXPECT_TRUE(json::parse(cl.Get("/health")->body)["retraining"].get<bool>());
  release.set_value();
  EXPECT_EQ(first.get(), 200);
  srv.stop();
  th.join();
}

TEST_F(RunFixture, RetrainReportsTheFalsePositiveWindows) {
  const fs::path run = fresh_run("retrain");
  service::ServiceOptions opts;
  opts.retrain.epochs = 1;
  service::Service svc(run, opts);

  const json none = svc.retrain();
  EXPECT_FALSE(none["retrained"].get<bool>());
  EXPECT_EQ(none["before"], none["after"]);

  const json q = svc.queues()["queues"];
  json target;
  for (const auto& item : q)
    if (item["window_indices"].size() >= 1 && item["flagged"].get<bool>()) {
      target = item;
      break;
    }
  ASSERT_FALSE(target.is_null());
  svc.verdict(target["id"], {{"verdict", "fp"}});
  const std::string old_model = service::read_file(run / "model.bin");
  const json r = svc.retrain();
  EXPECT_EQ(r["v"], 1);
  EXPECT_TRUE(r["retrained"].get<bool>());
  EXPECT_EQ(r["fp_windows"].size(), target["window_indices"].size());
  EXPECT_GT(r["retrain_events"].get<std::size_t>(), 0u);
  EXPECT_EQ(r["generation"], 1);
  EXPECT_TRUE(r["before"]["fp"].is_number());  // the run carries ground truth
  EXPECT_TRUE(r["after"]["metrics"].is_object());
  EXPECT_NE(service::read_file(run / "model.bin"), old_model);
  EXPECT_EQ(service::read_file(run / "history/gen-0/model.bin"), old_model);
  EXPECT_EQ(svc.queues()["generation"], 1);
  // verdicts of the previous generation do not carry over
  for (const auto& item : svc.queues()["queues"]) EXPECT_TRUE(item["verdict"].is_null());
  EXPECT_EQ(count_lines(run / "verdicts.jsonl"), 1u);
}

TEST_F(RunFixture, RetrainFpCommandReportsBothSides) {
  const std::string out = (root / "m2.bin").string();
  auto r = cli_run({"retrain-fp", "--model", (root / "m.bin").string(), "--thresholds", (root / "th0.json").string(),
                    "--input", (root / "sc/test.jsonl").string(), "--labels", (root / "sc/labels.jsonl").string(),
                    "--split-window", "4", "--epochs", "1", "--out", out, "--report", (root / "fp.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = service::read_json(root / "fp.json");
  EXPECT_EQ(rep["before"]["tp"].get<int>() + rep["before"]["tn"].get<int>() + rep["before"]["fp"].get<int>() +
                rep["before"]["fn"].get<int>(),
            4);
  EXPECT_TRUE(fs::exists(out));
}

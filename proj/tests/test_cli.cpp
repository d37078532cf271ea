#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "adacontrast/bench.hpp"
#include "adacontrast/config.hpp"
#include "adacontrast/io.hpp"
#include "cli.hpp"
#include "json.hpp"

using namespace adacontrast;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "adacontrast_cli_test";

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const std::string& name, const std::string& body) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / (name + ".cfg");
  std::ofstream(p) << body;
  return p;
}

const char* kSmall =
    "schema_version = 1\ntask = two_moons_rotate(30)\nname = small\nsamples_per_domain = 300\n"
    "source_epochs = 4\nsource_lr = 0.03\nepochs = 2\nbatch_size = 64\nbottleneck_dim = 16\nkey_queue_size = 128\n";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json summary(const fs::path& dir) { return json::parse(slurp(dir / "summary.json")); }

// A fresh results root per test case.
std::string fresh(const std::string& sub) {
  fs::remove_all(kRoot / sub);
  return (kRoot / sub).string();
}

std::string results(const std::string& sub) { return (kRoot / sub).string(); }

}  // namespace

TEST_CASE("config errors exit nonzero and name the key") {
  const auto missing = write_config("missing", "schema_version = 1\nseed = 2\n");
  auto r = call({"train-source", missing.string(), "--results", results("err")});
  CHECK(r.code == cli::kExitError);
  CHECK(r.err.find("missing required key 'task'") != std::string::npos);

  const auto typo = write_config("typo", "schema_version = 1\ntask = two_moons_rotate(30)\nlearning_rate = 1\n");
  r = call({"adapt", typo.string(), "--results", results("err")});
  CHECK(r.code == cli::kExitError);
  CHECK(r.err.find(":3: unknown key 'learning_rate'") != std::string::npos);

  const auto ok = write_config("small", kSmall);
  r = call({"adapt", ok.string(), "--set", "epochz=3", "--results", results("err")});
  CHECK(r.code == cli::kExitError);
  CHECK(r.err.find("epochz") != std::string::npos);

  CHECK(call({"frobnicate"}).code == cli::kExitError);
  CHECK(call({"--print-defaults"}).out.find("\nlr = 2e-04\n") != std::string::npos);
}

TEST_CASE("train-source is reproducible and its checkpoint matches the log") {
  const auto cfg = write_config("small", kSmall);
  auto a = call({"train-source", cfg.string(), "--results", fresh("a")});
  auto b = call({"train-source", cfg.string(), "--results", fresh("b")});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const fs::path ck_a = kRoot / "a/runs/small/0/source.json";
  CHECK(a.out == ck_a.string() + "\n");
  CHECK(slurp(ck_a) == slurp(kRoot / "b/runs/small/0/source.json"));

  const Checkpoint ck = load_checkpoint(ck_a);
  const RunConfig rc = load_config(cfg);
  const auto task = make_task(rc.task, rc.adapt.seed, rc.samples_per_domain);
  const auto sr = train_source(rc.adapt, task.source, task.num_classes);
  CHECK(evaluate(ck.params, subset(task.source, sr.val_rows)).accuracy == ck.val_accuracy);
  CHECK(json::parse(slurp(kRoot / "a/runs/small/0/source_summary.json"))["val_accuracy"] == ck.val_accuracy);
}

TEST_CASE("adapt writes the run layout and round-trips its accuracy") {
  const auto cfg = write_config("small", kSmall);
  const std::string root = fresh("adapt");
  CHECK(call({"adapt", cfg.string(), "--results", root}).code == cli::kExitError);  // no checkpoint yet
  REQUIRE(call({"train-source", cfg.string(), "--results", root}).code == 0);
  auto off = call({"adapt", cfg.string(), "--results", root});
  auto on = call({"adapt", cfg.string(), "--online", "--results", root});
  REQUIRE(off.code == 0);
  REQUIRE(on.code == 0);
  const fs::path od = kRoot / "adapt/runs/small/0", nd = kRoot / "adapt/runs/small-online/0";
  for (const char* f : {"config", "metrics.csv", "summary.json", "calibration.csv"}) {
    CHECK(fs::exists(od / f));
    CHECK(fs::exists(nd / f));
  }
  const json so = summary(od), sn = summary(nd);
  CHECK(so["mode"] == "offline");
  CHECK(sn["mode"] == "online");
  CHECK(sn.contains("stream_accuracy"));

  const RunConfig rc = load_config(cfg);
  const auto task = make_task(rc.task, 0, rc.samples_per_domain);
  CHECK(evaluate(load_checkpoint(od / "model.json").params, task.target).accuracy == so["accuracy"].get<double>());
  CHECK(parse_config(slurp(od / "config")).adapt == rc.adapt);

  std::ifstream in(od / "metrics.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == kMetricsHeader);
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == so["steps"].get<std::size_t>());
}

TEST_CASE("divergence exits with its own code and is recorded") {
  const auto cfg = write_config("small", kSmall);
  const std::string root = fresh("div");
  REQUIRE(call({"train-source", cfg.string(), "--results", root}).code == 0);
  const fs::path ck_path = kRoot / "div/runs/small/0/source.json";
  Checkpoint ck = load_checkpoint(ck_path);
  ck.params.scale.setConstant(1e308);
  save_checkpoint(ck_path, ck);
  const auto r = call({"adapt", cfg.string(), "--results", root});
  CHECK(r.code == cli::kExitDiverged);
  CHECK(r.err.find("diverged") != std::string::npos);
  const json s = summary(kRoot / "div/runs/small/0");
  CHECK(s["diverged"] == true);
  CHECK(fs::exists(kRoot / "div/runs/small/0/diverged.json"));
}

TEST_CASE("sweep grids") {
  const auto cfg = write_config("small", kSmall);
  auto r = call({"sweep", cfg.string(), "--axis", "neighbors", "--list"});
  CHECK(r.out == "0 N=1\n1 N=2\n2 N=3\n3 N=6\n4 N=11\n5 N=21\n6 N=41\n");
  r = call({"sweep", cfg.string(), "--axis", "queue_size", "--list"});
  CHECK(r.out == "0 M=128\n1 M=256\n2 M=full\n");
  r = call({"sweep", cfg.string(), "--axis", "lr", "--list"});
  CHECK(r.out == "0 lr=1x\n1 lr=3x\n2 lr=10x\n");
  CHECK(call({"sweep", cfg.string(), "--axis", "depth", "--list"}).code == cli::kExitError);
  r = call({"sweep", cfg.string(), "--axis", "lr", "--point", "1", "--results", fresh("sweep")});
  REQUIRE(r.code == 0);
  const json s = summary(kRoot / "sweep/runs/small-lr-3x/0");
  CHECK(s["method"] == "adacontrast@lr=3x");
  CHECK(parse_config(slurp(kRoot / "sweep/runs/small-lr-3x/0/config")).adapt.lr == 3 * AdaptConfig{}.lr);
}

TEST_CASE("report aggregates, orders and rejects empty directories") {
  fs::create_directories(kRoot / "empty");
  CHECK(call({"report", results("empty")}).code == cli::kExitError);
  CHECK(call({"report", results("nonexistent")}).code == cli::kExitError);

  // Hand-written summaries: the report must reproduce their averages.
  auto put = [](const std::string& name, int seed, const std::string& task, const std::string& method, double acc,
                double ece) {
    const fs::path dir = kRoot / "rep/runs" / name / std::to_string(seed);
    fs::create_directories(dir);
    json s = {{"task", task}, {"method", method}, {"mode", "offline"}, {"seed", seed},
              {"accuracy", acc}, {"per_class_accuracy", acc}, {"ece", ece}, {"mce", 2 * ece},
              {"source_only_accuracy", 0.5}, {"diverged", false}};
    std::ofstream(dir / "summary.json") << s.dump();
  };
  fresh("rep");
  put("b1", 1, "t_b", "m", 0.8, 0.1);
  auto one = call({"report", results("rep")});
  REQUIRE(one.code == 0);
  CHECK(one.out.find("# runs\ntask,method,mode,seed,accuracy,per_class_accuracy,ece,mce,stream_accuracy,"
                     "source_only_accuracy\nt_b,m,offline,1,0.8000,0.8000,0.1000,0.2000,,0.5000\n\n") == 0);

  put("b0", 0, "t_b", "m", 0.6, 0.3);
  put("a", 0, "t_a", "m", 0.9, 0.0);
  put("z", 0, "t_a", "entropy_min", 0.7, 0.2);
  const auto r = call({"report", results("rep")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("t_a,entropy_min,offline,0,0.7000,0.7000,0.2000,0.4000,,0.5000\n"
                   "t_a,m,offline,0,0.9000,0.9000,0.0000,0.0000,,0.5000\n"
                   "t_b,m,offline,0,0.6000,0.6000,0.3000,0.6000,,0.5000\n"
                   "t_b,m,offline,1,0.8000,0.8000,0.1000,0.2000,,0.5000\n") != std::string::npos);
  CHECK(r.out.find("t_b,m,2,0.7000,0.7000,0.2000,0.4000\n") != std::string::npos);
  // Suite mean of task means: (0.9 + 0.7) / 2.
  CHECK(r.out.find("m,2,0.8000,0.8000,0.1000,0.2000\n") != std::string::npos);
  CHECK(call({"report", results("rep")}).out == r.out);
}

TEST_CASE("ablate writes the ladder and the report picks it up") {
  const auto cfg = write_config("small", kSmall);
  const std::string root = fresh("abl");
  const auto r = call({"ablate", cfg.string(), "--results", root});
  REQUIRE(r.code == 0);
  const fs::path dir = kRoot / "abl/runs/small-ablation/0";
  const std::string csv = slurp(dir / "ablation.csv");
  CHECK(csv.find("two_moons_rotate(30),#1,epoch_offline,") != std::string::npos);
  CHECK(csv.find("two_moons_rotate(30),#4,online_refine,1,1,1,1,") != std::string::npos);
  const json s = summary(dir);
  REQUIRE(s["rows"].size() == 5);
  for (const auto& row : s["rows"]) CHECK(row["config_hash"] == s["rows"][0]["config_hash"]);
  const auto rep = call({"report", root});
  REQUIRE(rep.code == 0);
  CHECK(rep.out.find("# ablation ladder suite average\nrow,tasks,accuracy\n#1,1,") != std::string::npos);
}

TEST_CASE("method labels") {
  AdaptConfig c;
  CHECK(cli::method_label(c) == "adacontrast");
  c.online = true;
  CHECK(cli::method_label(c) == "adacontrast_online");
  CHECK(cli::method_label(method_config("epoch_pseudo_label", AdaptConfig{})) == "epoch_pseudo_label");
  CHECK(cli::method_label(method_config("entropy_min", AdaptConfig{})) == "entropy_min");
  c = AdaptConfig{};
  c.components = ablation_rows()[2].second;
  CHECK(cli::method_label(c) == "ablation#3-");
}

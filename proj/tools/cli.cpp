#include "cli.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <tuple>

#include "CLI11.hpp"
#include "adacontrast/bench.hpp"
#include "adacontrast/config.hpp"
#include "adacontrast/io.hpp"
#include "json.hpp"

namespace adacontrast::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = ADACONTRAST_VERSION;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string results;
  std::vector<std::string> overrides;  // key=value
};

struct Context {
  Common common;
  RunConfig config;
  fs::path root;
  std::string command;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("config", c.config_path, "Run config file")->required();
  sub->add_option("--seed", c.seed, "Override the config seed");
  sub->add_option("--results", c.results, "Results root (default: $ADACONTRAST_RESULTS, else ./results)");
  sub->add_option("--set", c.overrides, "Override a config key, key=value (repeatable)");
}

fs::path results_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ADACONTRAST_RESULTS"); env && *env) return env;
  return "results";
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return base;
  std::map<std::string, std::string> lines;
  std::vector<std::string> order;
  std::istringstream in(serialize_config(base));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    order.push_back(line.substr(0, eq));
    lines[order.back()] = line.substr(eq + 3);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set: expected key=value, got '" + o + "'");
    const std::string key = o.substr(0, eq);
    if (!lines.count(key)) throw ConfigError("--set: unknown key '" + key + "'");
    lines[key] = o.substr(eq + 1);
  }
  std::string text;
  for (const auto& k : order) text += k + " = " + lines[k] + "\n";
  return parse_config(text, "--set");
}

Context make_context(const Common& c, const std::string& command) {
  Context ctx;
  ctx.common = c;
  ctx.command = command;
  ctx.config = apply_overrides(load_config(c.config_path), c.overrides);
  if (c.seed) ctx.config.adapt.seed = *c.seed;
  ctx.root = results_root(c.results);
  return ctx;
}

fs::path run_dir(const Context& ctx, const std::string& name) {
  return ctx.root / "runs" / name / std::to_string(ctx.config.adapt.seed);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

json manifest(const Context& ctx, const fs::path& dir) {
  return {{"command", ctx.command},
          {"config_path", ctx.common.config_path},
          {"seed", ctx.config.adapt.seed},
          {"version", kVersion},
          {"output_dir", dir.string()}};
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ShiftTask load_task(const RunConfig& rc) { return make_task(rc.task, rc.adapt.seed, rc.samples_per_domain); }

fs::path default_checkpoint(const Context& ctx) { return run_dir(ctx, ctx.config.run_name()) / "source.json"; }

fs::path checkpoint_path(const Context& ctx) {
  return ctx.config.source_checkpoint.empty() ? default_checkpoint(ctx) : fs::path(ctx.config.source_checkpoint);
}

Params checked_source(const Checkpoint& ck, const ShiftTask& task) {
  const auto& a = ck.params.arch;
  if (a.input_dim != task.source.dim() || a.num_classes != task.num_classes)
    throw IoError("checkpoint does not fit task " + task.name + " (input_dim " + std::to_string(a.input_dim) +
                  ", num_classes " + std::to_string(a.num_classes) + ")");
  return ck.params;
}

// Adaptation runs need a checkpoint; ablations and sweeps fall back to
// training the source model in memory.
Params source_for(const Context& ctx, const ShiftTask& task, bool required) {
  const fs::path path = checkpoint_path(ctx);
  if (fs::exists(path)) return checked_source(load_checkpoint(path), task);
  if (required) throw IoError("missing source checkpoint " + path.string() + " (run train-source first)");
  return train_source(ctx.config.adapt, task.source, task.num_classes).params;
}

int cmd_train_source(const Context& ctx, std::ostream& out) {
  const auto task = load_task(ctx.config);
  const auto& cfg = ctx.config.adapt;
  const auto sr = train_source(cfg, task.source, task.num_classes);
  const fs::path dir = run_dir(ctx, ctx.config.run_name());
  Checkpoint ck{sr.params, cfg.seed, source_split_seed(cfg.seed), sr.val_accuracy, task.name};
  const fs::path path = ctx.config.source_checkpoint.empty() ? dir / "source.json" : fs::path(ctx.config.source_checkpoint);
  save_checkpoint(path, ck);
  write_text(dir / "source_config", serialize_config(ctx.config));
  json s;
  s["task"] = task.name;
  s["mode"] = "source";
  s["seed"] = cfg.seed;
  s["val_accuracy"] = sr.val_accuracy;
  s["best_epoch"] = sr.best_epoch;
  s["epoch_loss"] = sr.epoch_loss;
  s["source_accuracy"] = evaluate(sr.params, task.source).accuracy;
  s["target_accuracy"] = evaluate(sr.params, task.target).accuracy;
  s["checkpoint"] = path.string();
  s["manifest"] = manifest(ctx, dir);
  write_text(dir / "source_summary.json", s.dump(2) + "\n");
  out << path.string() << '\n';
  return kExitOk;
}

struct AdaptOutcome {
  bool diverged = false;
  std::string message;
};

AdaptOutcome adapt_into(const Context& ctx, const AdaptConfig& cfg, const std::string& name,
                        const std::string& method, const ShiftTask& task, const Params& source) {
  const fs::path dir = run_dir(ctx, name);
  fs::create_directories(dir);
  RunConfig rc = ctx.config;
  rc.adapt = cfg;
  rc.name = name;
  write_text(dir / "config", serialize_config(rc));
  AdaptConfig run_cfg = cfg;
  run_cfg.divergence_dump = (dir / "diverged.json").string();

  json s;
  s["task"] = task.name;
  s["method"] = method;
  s["mode"] = cfg.online ? "online" : "offline";
  s["seed"] = cfg.seed;
  s["config_hash"] = hex(config_hash_without_components(cfg));
  s["manifest"] = manifest(ctx, dir);

  MetricsWriter metrics(dir / "metrics.csv");
  AdaptOutcome outcome;
  try {
    const RunResult r = adapt(run_cfg, source, task.target, {}, [&](const StepMetrics& m) { metrics.append(m); });
    const auto& e = r.final_eval;
    s["diverged"] = false;
    s["source_only_accuracy"] = evaluate(source, task.target).accuracy;
    s["accuracy"] = e.accuracy;
    s["per_class_accuracy"] = e.per_class_accuracy;
    s["ece"] = e.calibration.ece;
    s["mce"] = e.calibration.mce;
    if (cfg.online) s["stream_accuracy"] = r.stream_accuracy;
    s["pseudo_label_accuracy"] = r.epoch_pseudo_label_acc;
    s["steps"] = r.steps.size();
    s["dropped_batches"] = r.dropped_batches;
    write_calibration_csv(dir / "calibration.csv", e.calibration);
    save_checkpoint(dir / "model.json", Checkpoint{r.params, cfg.seed, source_split_seed(cfg.seed), e.accuracy, task.name});
  } catch (const DivergenceError& d) {
    s["diverged"] = true;
    s["diverged_step"] = d.step();
    s["error"] = d.what();
    outcome = {true, d.what()};
  }
  write_text(dir / "summary.json", s.dump(2) + "\n");
  return outcome;
}

int report_outcome(const AdaptOutcome& o, const fs::path& dir, std::ostream& out, std::ostream& err) {
  if (o.diverged) {
    err << "error: " << o.message << '\n';
    return kExitDiverged;
  }
  out << dir.string() << '\n';
  return kExitOk;
}

std::string run_name_for(const Context& ctx, const AdaptConfig& cfg) {
  std::string name = ctx.config.run_name();
  if (cfg.online && !ctx.config.adapt.online) name += "-online";
  return name;
}

int cmd_adapt(const Context& ctx, bool online, std::ostream& out, std::ostream& err) {
  const auto task = load_task(ctx.config);
  const Params source = source_for(ctx, task, true);
  AdaptConfig cfg = ctx.config.adapt;
  if (online) cfg.online = true;
  const std::string name = run_name_for(ctx, cfg);
  return report_outcome(adapt_into(ctx, cfg, name, method_label(cfg), task, source), run_dir(ctx, name), out, err);
}

int cmd_ablate(const Context& ctx, std::ostream& out, std::ostream& err) {
  const auto task = load_task(ctx.config);
  const Params source = source_for(ctx, task, false);
  const std::string name = ctx.config.run_name() + "-ablation";
  const fs::path dir = run_dir(ctx, name);
  std::vector<AblationRow> rows;
  try {
    rows = run_ablation_ladder(task, source, ctx.config.adapt);
  } catch (const DivergenceError& d) {
    err << "error: " << d.what() << '\n';
    return kExitDiverged;
  }
  write_text(dir / "config", serialize_config(ctx.config));
  write_text(dir / "ablation.csv", ablation_csv(rows, task.name));
  json s;
  s["task"] = task.name;
  s["mode"] = "ablation";
  s["seed"] = ctx.config.adapt.seed;
  s["rows"] = json::array();
  for (const auto& r : rows)
    s["rows"].push_back({{"row", r.row}, {"accuracy", r.accuracy}, {"config_hash", hex(r.config_hash)}});
  s["manifest"] = manifest(ctx, dir);
  write_text(dir / "summary.json", s.dump(2) + "\n");
  out << dir.string() << '\n';
  return kExitOk;
}

struct SweepPoint {
  std::string label;  // e.g. "lr=3x"
  AdaptConfig config;
};

std::vector<SweepPoint> sweep_points(const AdaptConfig& base, const std::string& axis, Index n_target) {
  std::vector<SweepPoint> pts;
  auto add = [&](std::string label, auto&& edit) {
    AdaptConfig c = base;
    edit(c);
    pts.push_back({std::move(label), c});
  };
  if (axis == "queue_size") {
    for (Index m = 128; m < n_target; m *= 2) add("M=" + std::to_string(m), [m](AdaptConfig& c) { c.queue_size = m; });
    add("M=full", [n_target](AdaptConfig& c) { c.queue_size = n_target; });
  } else if (axis == "neighbors") {
    for (Index k : {1, 2, 3, 6, 11, 21, 41}) add("N=" + std::to_string(k), [k](AdaptConfig& c) { c.neighbors = k; });
  } else if (axis == "lr") {
    for (int mult : {1, 3, 10})
      add("lr=" + std::to_string(mult) + "x", [mult](AdaptConfig& c) { c.lr *= mult; });
  } else {
    throw UsageError("sweep: unknown axis '" + axis + "' (queue_size, neighbors, lr)");
  }
  return pts;
}

int cmd_sweep(const Context& ctx, const std::string& axis, std::optional<int> point, bool list, std::ostream& out,
              std::ostream& err) {
  const auto pts = sweep_points(ctx.config.adapt, axis, ctx.config.samples_per_domain);
  if (list) {
    for (std::size_t i = 0; i < pts.size(); ++i) out << i << ' ' << pts[i].label << '\n';
    return kExitOk;
  }
  if (point && (*point < 0 || *point >= static_cast<int>(pts.size())))
    throw UsageError("sweep: --point out of range [0, " + std::to_string(pts.size()) + ")");
  const auto task = load_task(ctx.config);
  const Params source = source_for(ctx, task, false);
  int code = kExitOk;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (point && static_cast<int>(i) != *point) continue;
    const auto& p = pts[i];
    std::string tag = p.label;
    std::replace(tag.begin(), tag.end(), '=', '-');
    const std::string name = ctx.config.run_name() + "-" + tag;
    const auto o = adapt_into(ctx, p.config, name, method_label(p.config) + "@" + p.label, task, source);
    if (report_outcome(o, run_dir(ctx, name), out, err) != kExitOk) code = kExitDiverged;
  }
  return code;
}

// ---- report ----

struct RunRow {
  std::string task, method, mode;
  std::uint64_t seed = 0;
  double accuracy = 0, per_class = 0, ece = 0, mce = 0, source_only = 0;
  std::optional<double> stream;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

int cmd_report(const std::string& dir_flag, std::ostream& out) {
  const fs::path dir = dir_flag;
  if (!fs::is_directory(dir)) throw IoError("report: no such directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<RunRow> runs;
  // (task, row) -> accuracies over seeds; ladder order kept by first appearance
  std::map<std::pair<std::string, std::string>, std::vector<double>> ladder;
  std::vector<std::string> ladder_rows;
  // method -> summed bins (count, conf * count, acc * count)
  std::map<std::string, std::vector<std::array<double, 5>>> reliability;

  for (const auto& f : files) {
    if (f.filename() == "summary.json") {
      const json s = read_json(f);
      const std::string mode = s.value("mode", "");
      if ((mode != "offline" && mode != "online") || s.value("diverged", false)) continue;
      RunRow r;
      r.task = s.at("task");
      r.method = s.at("method");
      r.mode = mode;
      r.seed = s.at("seed");
      r.accuracy = s.at("accuracy");
      r.per_class = s.at("per_class_accuracy");
      r.ece = s.at("ece");
      r.mce = s.at("mce");
      r.source_only = s.at("source_only_accuracy");
      if (s.contains("stream_accuracy")) r.stream = s.at("stream_accuracy").get<double>();
      runs.push_back(r);
      const fs::path cal = f.parent_path() / "calibration.csv";
      if (fs::exists(cal)) {
        std::ifstream in(cal);
        std::string line;
        std::getline(in, line);
        auto& acc = reliability[r.method];
        for (std::size_t b = 0; std::getline(in, line); ++b) {
          const auto cells = split_csv(line);
          if (cells.size() != 5) throw IoError(cal.string() + ": malformed row");
          if (acc.size() <= b) acc.push_back({std::stod(cells[0]), std::stod(cells[1]), 0, 0, 0});
          const double n = std::stod(cells[4]);
          acc[b][2] += n * std::stod(cells[2]);
          acc[b][3] += n * std::stod(cells[3]);
          acc[b][4] += n;
        }
      }
    } else if (f.filename() == "ablation.csv") {
      std::ifstream in(f);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto cells = split_csv(line);
        if (cells.size() < 8) throw IoError(f.string() + ": malformed row");
        ladder[{cells[0], cells[1]}].push_back(std::stod(cells[7]));
        if (std::find(ladder_rows.begin(), ladder_rows.end(), cells[1]) == ladder_rows.end())
          ladder_rows.push_back(cells[1]);
      }
    }
  }
  if (runs.empty() && ladder.empty()) throw IoError("report: no completed runs under " + dir.string());

  std::sort(runs.begin(), runs.end(), [](const RunRow& a, const RunRow& b) {
    return std::tie(a.task, a.method, a.seed, a.mode) < std::tie(b.task, b.method, b.seed, b.mode);
  });

  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };

  if (!runs.empty()) {
    out << "# runs\ntask,method,mode,seed,accuracy,per_class_accuracy,ece,mce,stream_accuracy,source_only_accuracy\n";
    for (const auto& r : runs)
      out << r.task << ',' << r.method << ',' << r.mode << ',' << r.seed << ',' << fmt(r.accuracy) << ','
          << fmt(r.per_class) << ',' << fmt(r.ece) << ',' << fmt(r.mce) << ',' << (r.stream ? fmt(*r.stream) : "")
          << ',' << fmt(r.source_only) << '\n';

    using Key = std::pair<std::string, std::string>;
    std::map<Key, std::array<std::vector<double>, 4>> by_task;
    for (const auto& r : runs) {
      auto& g = by_task[{r.task, r.method}];
      g[0].push_back(r.accuracy);
      g[1].push_back(r.per_class);
      g[2].push_back(r.ece);
      g[3].push_back(r.mce);
    }
    out << "\n# mean over seeds\ntask,method,seeds,accuracy,per_class_accuracy,ece,mce\n";
    std::map<std::string, std::array<std::vector<double>, 4>> suite;
    for (const auto& [k, g] : by_task) {
      out << k.first << ',' << k.second << ',' << g[0].size();
      for (int m = 0; m < 4; ++m) {
        out << ',' << fmt(mean(g[m]));
        suite[k.second][m].push_back(mean(g[m]));
      }
      out << '\n';
    }
    out << "\n# suite average (mean over tasks)\nmethod,tasks,accuracy,per_class_accuracy,ece,mce\n";
    for (const auto& [method, g] : suite) {
      out << method << ',' << g[0].size();
      for (int m = 0; m < 4; ++m) out << ',' << fmt(mean(g[m]));
      out << '\n';
    }
  }

  if (!ladder.empty()) {
    out << "\n# ablation ladder (mean over seeds)\ntask,row,seeds,accuracy\n";
    std::map<std::string, std::vector<double>> suite_rows;
    std::vector<std::string> tasks;
    for (const auto& [k, accs] : ladder)
      if (std::find(tasks.begin(), tasks.end(), k.first) == tasks.end()) tasks.push_back(k.first);
    for (const auto& t : tasks)
      for (const auto& row : ladder_rows) {
        auto it = ladder.find({t, row});
        if (it == ladder.end()) continue;
        out << t << ',' << row << ',' << it->second.size() << ',' << fmt(mean(it->second)) << '\n';
        suite_rows[row].push_back(mean(it->second));
      }
    out << "\n# ablation ladder suite average\nrow,tasks,accuracy\n";
    for (const auto& row : ladder_rows)
      out << row << ',' << suite_rows[row].size() << ',' << fmt(mean(suite_rows[row])) << '\n';
  }

  if (!reliability.empty()) {
    out << "\n# reliability (pooled over runs)\nmethod,bin_lo,bin_hi,mean_conf,acc,count\n";
    for (const auto& [method, bins] : reliability)
      for (const auto& b : bins) {
        const double n = b[4];
        out << method << ',' << fmt(b[0]) << ',' << fmt(b[1]) << ',' << fmt(n > 0 ? b[2] / n : 0.0) << ','
            << fmt(n > 0 ? b[3] / n : 0.0) << ',' << static_cast<long long>(n) << '\n';
      }
  }
  return kExitOk;
}

}  // namespace

std::string method_label(const AdaptConfig& config) {
  std::string label;
  if (config.objective == Objective::entropy_min) {
    label = "entropy_min";
  } else if (config.components == Components{}) {
    label = "adacontrast";
  } else if (config.components == method_config("epoch_pseudo_label", config).components) {
    label = "epoch_pseudo_label";
  } else {
    label = "adacontrast_custom";
    for (const auto& [row, comps] : ablation_rows())
      if (comps == config.components) label = "ablation" + row;
  }
  return config.online ? label + "_online" : label;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time adaptation with refined pseudo labels and class-excluded contrastive learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "Print every config key with its default value and exit");

  Common common;
  auto* train = app.add_subcommand("train-source", "Train the source model; writes source.json");
  add_common(train, common);
  bool online_flag = false;
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a source checkpoint to the target domain");
  add_common(adapt_cmd, common);
  adapt_cmd->add_flag("--online", online_flag, "Single-pass streaming mode");
  auto* online_cmd = app.add_subcommand("adapt-online", "Same as adapt --online");
  add_common(online_cmd, common);
  auto* ablate = app.add_subcommand("ablate", "Run the five-row ablation ladder");
  add_common(ablate, common);
  std::string axis;
  std::optional<int> point;
  bool list = false;
  auto* sweep = app.add_subcommand("sweep", "Hyper-parameter sensitivity grid over one axis");
  add_common(sweep, common);
  sweep->add_option("--axis", axis, "queue_size | neighbors | lr")->required();
  sweep->add_option("--point", point, "Run only this grid point (see --list)");
  sweep->add_flag("--list", list, "Print the grid points and exit");
  std::string report_dir;
  auto* report = app.add_subcommand("report", "Aggregate summary.json and ablation.csv files into tables");
  report->add_option("dir", report_dir, "Results directory")->required();

  // --print-defaults needs no subcommand.
  if (std::find(args.begin(), args.end(), "--print-defaults") != args.end()) {
    RunConfig defaults;
    defaults.task = "two_moons_rotate(30)";
    out << serialize_config(defaults);
    return kExitOk;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*report) return cmd_report(report_dir, out);
    CLI::App* sub = app.get_subcommands().front();
    const Context ctx = make_context(common, sub->get_name());
    if (*train) return cmd_train_source(ctx, out);
    if (*adapt_cmd) return cmd_adapt(ctx, online_flag, out, err);
    if (*online_cmd) return cmd_adapt(ctx, true, out, err);
    if (*ablate) return cmd_ablate(ctx, out, err);
    if (*sweep) return cmd_sweep(ctx, axis, point, list, out, err);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace adacontrast::cli

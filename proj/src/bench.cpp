#include "adacontrast/bench.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "adacontrast/config.hpp"
#include "adacontrast/io.hpp"

namespace adacontrast {

namespace {

struct ParsedSpec {
  std::string family;
  std::vector<double> args;
};

ParsedSpec parse_spec(std::string_view spec) {
  const auto open = spec.find('(');
  if (open == std::string_view::npos || spec.back() != ')')
    throw std::invalid_argument("make_task: malformed task spec '" + std::string(spec) + "'");
  ParsedSpec p;
  p.family = std::string(spec.substr(0, open));
  std::string inner(spec.substr(open + 1, spec.size() - open - 2));
  std::stringstream ss(inner);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0;
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw std::invalid_argument("make_task: empty argument in '" + std::string(spec) + "'");
    auto [ptr, ec] = std::from_chars(item.data() + b, item.data() + e + 1, v);
    if (ec != std::errc() || ptr != item.data() + e + 1)
      throw std::invalid_argument("make_task: bad argument '" + item + "'");
    p.args.push_back(v);
  }
  return p;
}

std::mt19937_64 domain_rng(std::uint64_t seed, std::string_view family, std::uint64_t domain) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : family) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(domain)};
  return std::mt19937_64(seq);
}

std::string fmt_arg(double v) { return format_double(v); }

// --- two moons -------------------------------------------------------------

constexpr double kMoonNoise = 0.1;

Dataset moons(Index n, double degrees, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, kMoonNoise);
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cx = 0.5, cy = 0.25;
  Dataset d;
  d.features.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = angle(rng);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += noise(rng);
    y += noise(rng);
    const double rx = cx + c * (x - cx) - s * (y - cy);
    const double ry = cy + s * (x - cx) + c * (y - cy);
    d.features(i, 0) = rx;
    d.features(i, 1) = ry;
    d.labels.push_back(label);
  }
  return d;
}

// --- Gaussian blobs --------------------------------------------------------

constexpr double kBlobMeanScale = 1.5;

Dataset blobs(Index n, const Tensor& means, const RowVector<double>& offset, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const Index classes = means.rows();
  Dataset d;
  d.features.resize(n, means.cols());
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    for (Index j = 0; j < means.cols(); ++j) d.features(i, j) = means(label, j) + offset(j) + noise(rng);
    d.labels.push_back(label);
  }
  return d;
}

// --- seven-segment digits ----------------------------------------------------

constexpr int kCanvas = 8;

// Segments a..g as (row0, col0, row1, col1) strokes on a 7 x 6 glyph box.
constexpr std::array<std::array<int, 4>, 7> kSegments = {{
    {0, 1, 0, 4},  // a: top
    {0, 4, 3, 4},  // b: upper right
    {3, 4, 6, 4},  // c: lower right
    {6, 1, 6, 4},  // d: bottom
    {3, 1, 6, 1},  // e: lower left
    {0, 1, 3, 1},  // f: upper left
    {3, 1, 3, 4},  // g: middle
}};

// Bit k set: segment k lit. Digits 0-9.
constexpr std::array<unsigned, 10> kDigitSegments = {0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
                                                     0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111};

RowVector<double> render_digit(int digit, int dy, int dx, double intensity) {
  RowVector<double> img = RowVector<double>::Zero(kCanvas * kCanvas);
  for (int k = 0; k < 7; ++k) {
    if (!((kDigitSegments[static_cast<std::size_t>(digit)] >> k) & 1u)) continue;
    const auto& s = kSegments[static_cast<std::size_t>(k)];
    for (int r = s[0]; r <= s[2]; ++r)
      for (int c = s[1]; c <= s[3]; ++c) img((r + dy) * kCanvas + (c + dx)) = intensity;
  }
  return img;
}

RowVector<double> blur(const RowVector<double>& img, double amount) {
  RowVector<double> out = img;
  for (int r = 0; r < kCanvas; ++r)
    for (int c = 0; c < kCanvas; ++c) {
      double acc = 0.0;
      int cnt = 0;
      for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= kCanvas || cc < 0 || cc >= kCanvas) continue;
        acc += img(rr * kCanvas + cc);
        ++cnt;
      }
      out(r * kCanvas + c) = (1.0 - amount) * img(r * kCanvas + c) + amount * acc / cnt;
    }
  return out;
}

Dataset digits(Index n, double severity, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> shift(0, 1);
  std::uniform_real_distribution<double> intensity(0.7, 1.0);
  std::normal_distribution<double> noise(0.0, 0.15 + 0.1 * severity);
  const double blur_amount = std::min(0.9, 0.18 * severity);
  const double contrast = std::max(0.1, 1.0 - 0.12 * severity);
  const double brightness = 0.06 * severity;
  Dataset d;
  d.features.resize(n, kCanvas * kCanvas);
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 10);
    RowVector<double> img = render_digit(label, shift(rng), shift(rng), intensity(rng));
    if (severity > 0) img = blur(img, blur_amount);
    img = img * contrast;
    img.array() += brightness;
    for (Index j = 0; j < img.size(); ++j) img(j) += noise(rng);
    d.features.row(i) = img;
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace

ShiftTask make_task(std::string_view spec, std::uint64_t seed, Index n) {
  if (n < 2) throw std::invalid_argument("make_task: need at least two samples per domain");
  const auto p = parse_spec(spec);
  ShiftTask task;
  auto src_rng = domain_rng(seed, p.family, 0);
  auto tgt_rng = domain_rng(seed, p.family, 1);
  if (p.family == "two_moons_rotate") {
    if (p.args.size() != 1) throw std::invalid_argument("two_moons_rotate expects (degrees)");
    task.name = "two_moons_rotate(" + fmt_arg(p.args[0]) + ")";
    task.num_classes = 2;
    task.source = moons(n, 0.0, src_rng);
    task.target = moons(n, p.args[0], tgt_rng);
    task.shift = "rotation " + fmt_arg(p.args[0]) + " deg";
  } else if (p.family == "gauss_blobs_shift") {
    if (p.args.size() != 3) throw std::invalid_argument("gauss_blobs_shift expects (delta, classes, dim)");
    const double delta = p.args[0];
    const auto classes = static_cast<Index>(p.args[1]);
    const auto dim = static_cast<Index>(p.args[2]);
    if (classes < 2 || dim < 1) throw std::invalid_argument("gauss_blobs_shift: need >= 2 classes and dim >= 1");
    task.name = "gauss_blobs_shift(" + fmt_arg(delta) + "," + std::to_string(classes) + "," + std::to_string(dim) + ")";
    task.num_classes = static_cast<int>(classes);
    auto geo = domain_rng(seed, p.family, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor means(classes, dim);
    for (Index k = 0; k < means.size(); ++k) means.data()[k] = kBlobMeanScale * normal(geo);
    RowVector<double> dir(dim);
    for (Index j = 0; j < dim; ++j) dir(j) = normal(geo);
    dir.normalize();
    task.source = blobs(n, means, RowVector<double>::Zero(dim), src_rng);
    task.target = blobs(n, means, delta * dir, tgt_rng);
    task.shift = "translation " + fmt_arg(delta);
  } else if (p.family == "digits_corrupt") {
    if (p.args.size() != 1) throw std::invalid_argument("digits_corrupt expects (severity)");
    task.name = "digits_corrupt(" + fmt_arg(p.args[0]) + ")";
    task.num_classes = 10;
    task.source = digits(n, 0.0, src_rng);
    task.target = digits(n, p.args[0], tgt_rng);
    task.shift = "corruption severity " + fmt_arg(p.args[0]);
  } else {
    throw std::invalid_argument("make_task: unknown task family '" + p.family + "'");
  }
  return task;
}

std::vector<std::string> suite_tasks() {
  return {"two_moons_rotate(30)", "gauss_blobs_shift(6,8,16)", "digits_corrupt(1)"};
}

AdaptConfig bench_config(std::uint64_t seed) {
  AdaptConfig c;
  c.seed = seed;
  c.arch.bottleneck_dim = 64;
  c.source_epochs = 20;
  c.source_lr = 3e-2;
  c.lr = 1e-3;
  c.key_queue_size = 1024;
  // Coordinate dropout erases most of a 2-D input; keep the strong view smooth.
  c.augment.strong_jitter_sigma = 0.1;
  c.augment.strong_drop_prob = 0.0;
  c.augment.strong_scale_lo = 0.9;
  c.augment.strong_scale_hi = 1.1;
  return c;
}

AdaptConfig method_config(std::string_view method, const AdaptConfig& base) {
  AdaptConfig c = base;
  if (method == "adacontrast" || method == "source_only") {
  } else if (method == "adacontrast_online") {
    c.online = true;
  } else if (method == "epoch_pseudo_label") {
    c.components = {PseudoLabelSource::epoch_offline, false, false, false, false};
  } else if (method == "entropy_min") {
    c.objective = Objective::entropy_min;
  } else {
    throw std::invalid_argument("unknown method '" + std::string(method) + "'");
  }
  return c;
}

MethodResult run_baseline(std::string_view method, const ShiftTask& task, const Params& source,
                          const AdaptConfig& config) {
  MethodResult r;
  r.method = std::string(method);
  const AdaptConfig c = method_config(method, config);
  Evaluation e;
  if (method == "source_only") {
    e = evaluate(source, task.target);
  } else {
    r.run = adapt(c, source, task.target);
    e = r.run.final_eval;
    r.stream_accuracy = r.run.stream_accuracy;
  }
  r.accuracy = e.accuracy;
  r.per_class_accuracy = e.per_class_accuracy;
  r.ece = e.calibration.ece;
  r.mce = e.calibration.mce;
  return r;
}

std::vector<std::pair<std::string, Components>> ablation_rows() {
  using P = PseudoLabelSource;
  return {
      {"#1", {P::epoch_offline, false, false, false, false}},
      {"#2", {P::online_refine, false, false, false, false}},
      {"#3-", {P::online_refine, true, false, false, false}},
      {"#3", {P::online_refine, true, true, false, false}},
      {"#4", {P::online_refine, true, true, true, true}},
  };
}

std::uint64_t config_hash_without_components(const AdaptConfig& config) {
  RunConfig rc;
  rc.adapt = config;
  rc.adapt.components = Components{};
  rc.task = "-";
  const std::string text = serialize_config(rc);
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : text) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
  return h;
}

std::vector<AblationRow> run_ablation_ladder(const ShiftTask& task, const Params& source, const AdaptConfig& config) {
  std::vector<AblationRow> rows;
  for (const auto& [id, comps] : ablation_rows()) {
    AdaptConfig c = config;
    c.components = comps;
    c.online = false;
    c.objective = Objective::adacontrast;
    const auto run = adapt_offline(c, source, task.target);
    AblationRow row;
    row.row = id;
    row.components = comps;
    row.config_hash = config_hash_without_components(c);
    row.accuracy = run.final_eval.accuracy;
    row.per_class_accuracy = run.final_eval.per_class_accuracy;
    row.ece = run.final_eval.calibration.ece;
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, std::string_view task) {
  std::string s = "task,row,pseudo_labels,contrastive,exclusion,weak_strong,diversity,accuracy,per_class_accuracy,ece\n";
  for (const auto& r : rows) {
    const auto& c = r.components;
    s += std::string(task) + "," + r.row + "," + std::string(to_string(c.pseudo_labels)) + "," +
         (c.contrastive ? "1" : "0") + "," + (c.exclusion ? "1" : "0") + "," + (c.weak_strong ? "1" : "0") + "," +
         (c.diversity ? "1" : "0") + "," + format_double(r.accuracy) + "," + format_double(r.per_class_accuracy) +
         "," + format_double(r.ece) + "\n";
  }
  return s;
}

}  // namespace adacontrast

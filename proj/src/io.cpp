#include "adacontrast/io.hpp"

#include <charconv>
#include <sstream>

#include "json.hpp"

namespace adacontrast {

using nlohmann::json;

namespace {

json tensor_json(const Tensor& t) {
  return json{{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(t.data(), t.data() + t.size())}};
}

Tensor tensor_from(const json& j) {
  const auto data = j.at("data").get<std::vector<double>>();
  return make_tensor(j.at("rows").get<Index>(), j.at("cols").get<Index>(), data);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string checkpoint_to_json(const Checkpoint& ck) {
  const auto& a = ck.params.arch;
  json j;
  j["format"] = "adacontrast-checkpoint";
  j["version"] = 1;
  j["arch"] = {{"input_dim", a.input_dim},
               {"hidden", a.hidden},
               {"bottleneck_dim", a.bottleneck_dim},
               {"num_classes", a.num_classes}};
  j["seed"] = ck.seed;
  j["split_seed"] = ck.split_seed;
  j["val_accuracy"] = ck.val_accuracy;
  j["task"] = ck.task;
  json tensors = json::object();
  const auto names = ck.params.all_names();
  const auto ts = ck.params.all_tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) tensors[names[i]] = tensor_json(*ts[i]);
  j["tensors"] = std::move(tensors);
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "adacontrast-checkpoint") throw IoError("checkpoint: unrecognized format");
  try {
    NetArch a;
    a.input_dim = j.at("arch").at("input_dim").get<Index>();
    a.hidden = j.at("arch").at("hidden").get<std::vector<Index>>();
    a.bottleneck_dim = j.at("arch").at("bottleneck_dim").get<Index>();
    a.num_classes = j.at("arch").at("num_classes").get<Index>();
    Checkpoint ck;
    ck.params = init_params(a, 0);
    const auto names = ck.params.all_names();
    auto ts = ck.params.all_tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      Tensor t = tensor_from(j.at("tensors").at(names[i]));
      require_same_shape(*ts[i], t, "checkpoint tensor " + names[i]);
      *ts[i] = std::move(t);
    }
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.split_seed = j.at("split_seed").get<std::uint64_t>();
    ck.val_accuracy = j.at("val_accuracy").get<double>();
    ck.task = j.at("task").get<std::string>();
    return ck;
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_to_json(ck) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

std::string metrics_row(const StepMetrics& m) {
  std::string s = std::to_string(m.step) + "," + std::to_string(m.epoch);
  for (double v : {m.loss.l_ce, m.loss.l_ctr, m.loss.l_div, m.loss.total, m.lr, m.pseudo_label_acc})
    s += "," + format_double(v);
  return s;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw IoError("cannot write " + path.string());
  out_ << kMetricsHeader << '\n' << std::flush;
}

void MetricsWriter::append(const StepMetrics& m) { out_ << metrics_row(m) << '\n' << std::flush; }

void write_calibration_csv(const std::filesystem::path& path, const CalibrationReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bin_lo,bin_hi,mean_conf,acc,count\n";
  for (const auto& b : report.bins)
    out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << format_double(b.mean_confidence) << ','
        << format_double(b.accuracy) << ',' << b.count << '\n';
}

namespace {

constexpr char kDatasetMagic[4] = {'A', 'C', 'D', 'S'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("dataset cache: truncated file");
  return v;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kDatasetMagic, 4);
  put<std::uint32_t>(out, kDatasetCacheVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(d.size()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(d.dim()));
  out.write(reinterpret_cast<const char*>(d.features.data()), static_cast<std::streamsize>(sizeof(double) * d.features.size()));
  for (int y : d.labels) put<std::int32_t>(out, y);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kDatasetMagic, 4)) throw IoError("dataset cache: bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kDatasetCacheVersion) throw IoError("dataset cache: unsupported version " + std::to_string(version));
  const auto rows = static_cast<Index>(get<std::uint64_t>(in));
  const auto cols = static_cast<Index>(get<std::uint64_t>(in));
  Dataset d;
  d.features.resize(rows, cols);
  in.read(reinterpret_cast<char*>(d.features.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
  if (!in) throw IoError("dataset cache: truncated file");
  for (Index i = 0; i < rows; ++i) d.labels.push_back(get<std::int32_t>(in));
  require_finite(d.features, "dataset cache");
  return d;
}

std::string queue_dump_json(const ProbabilityQueue& qw, const KeyQueue& qs) {
  json j;
  j["qw"] = {{"capacity", qw.capacity()},
             {"features", tensor_json(qw.features().ordered())},
             {"probs", tensor_json(qw.probs().ordered())}};
  const Matrix<int> labels = qs.labels().ordered();
  j["qs"] = {{"capacity", qs.capacity()},
             {"keys", tensor_json(qs.keys().ordered())},
             {"labels", std::vector<int>(labels.data(), labels.data() + labels.size())}};
  return j.dump();
}

}  // namespace adacontrast

#include "adacontrast/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "adacontrast/io.hpp"

namespace adacontrast {

PseudoLabelSource parse_pseudo_label_source(std::string_view s) {
  if (s == "online_refine") return PseudoLabelSource::online_refine;
  if (s == "epoch_offline") return PseudoLabelSource::epoch_offline;
  if (s == "direct") return PseudoLabelSource::direct;
  throw ConfigError("unknown pseudo label source '" + std::string(s) + "'");
}

Objective parse_objective(std::string_view s) {
  if (s == "adacontrast") return Objective::adacontrast;
  if (s == "entropy_min") return Objective::entropy_min;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::vector<Index> parse_list(const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<Index>(trim(item)));
  return out;
}

std::string list_string(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AC_INT(KEY, MEMBER)                                                                               \
  Field {                                                                                                 \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<decltype(c.MEMBER)>(v); },    \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                                      \
  }
#define AC_REAL(KEY, MEMBER)                                                                             \
  Field {                                                                                                \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<double>(v); },               \
        [](const RunConfig& c) { return format_double(c.MEMBER); }                                      \
  }
#define AC_BOOL(KEY, MEMBER)                                                                             \
  Field {                                                                                                \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(v); },                         \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }                     \
  }
#define AC_STR(KEY, MEMBER)                                                                              \
  Field {                                                                                                \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = v; }, [](const RunConfig& c) { return c.MEMBER; } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      AC_INT("schema_version", schema_version),
      AC_STR("task", task),
      AC_STR("name", name),
      AC_STR("source_checkpoint", source_checkpoint),
      AC_INT("samples_per_domain", samples_per_domain),
      AC_INT("seed", adapt.seed),
      Field{"hidden", [](RunConfig& c, const std::string& v) { c.adapt.arch.hidden = parse_list(v); },
            [](const RunConfig& c) { return list_string(c.adapt.arch.hidden); }},
      AC_INT("bottleneck_dim", adapt.arch.bottleneck_dim),
      AC_INT("source_epochs", adapt.source_epochs),
      AC_REAL("source_lr", adapt.source_lr),
      AC_REAL("label_smoothing", adapt.label_smoothing),
      AC_INT("epochs", adapt.epochs),
      AC_INT("batch_size", adapt.batch_size),
      AC_REAL("lr", adapt.lr),
      AC_REAL("sgd_momentum", adapt.sgd_momentum),
      AC_REAL("weight_decay", adapt.weight_decay),
      AC_REAL("head_lr_mult", adapt.head_lr_mult),
      AC_BOOL("full_cosine", adapt.full_cosine),
      AC_REAL("ema_momentum", adapt.ema_momentum),
      AC_REAL("temperature", adapt.temperature),
      AC_INT("queue_size", adapt.queue_size),
      AC_INT("key_queue_size", adapt.key_queue_size),
      AC_INT("neighbors", adapt.neighbors),
      AC_REAL("gamma_ce", adapt.gammas.ce),
      AC_REAL("gamma_ctr", adapt.gammas.ctr),
      AC_REAL("gamma_div", adapt.gammas.div),
      AC_BOOL("online", adapt.online),
      AC_INT("warmup_samples", adapt.warmup_samples),
      AC_REAL("weak_jitter_sigma", adapt.augment.weak_jitter_sigma),
      AC_REAL("strong_jitter_sigma", adapt.augment.strong_jitter_sigma),
      AC_REAL("strong_drop_prob", adapt.augment.strong_drop_prob),
      AC_REAL("strong_scale_lo", adapt.augment.strong_scale_lo),
      AC_REAL("strong_scale_hi", adapt.augment.strong_scale_hi),
      Field{"pseudo_labels",
            [](RunConfig& c, const std::string& v) { c.adapt.components.pseudo_labels = parse_pseudo_label_source(v); },
            [](const RunConfig& c) { return std::string(to_string(c.adapt.components.pseudo_labels)); }},
      AC_BOOL("contrastive", adapt.components.contrastive),
      AC_BOOL("exclusion", adapt.components.exclusion),
      AC_BOOL("weak_strong", adapt.components.weak_strong),
      AC_BOOL("diversity", adapt.components.diversity),
      Field{"objective", [](RunConfig& c, const std::string& v) { c.adapt.objective = parse_objective(v); },
            [](const RunConfig& c) { return std::string(to_string(c.adapt.objective)); }},
  };
  return f;
}

#undef AC_INT
#undef AC_REAL
#undef AC_BOOL
#undef AC_STR

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_config(std::string_view text, std::string_view origin) {
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  const std::string where(origin);
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    const std::string at = where + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(at + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(at + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(at + "duplicate key '" + key + "'");
    try {
      it->second->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(at + key + ": " + e.what());
    }
  }
  for (const char* required : {"schema_version", "task"})
    if (!seen.count(required)) throw ConfigError(where + ": missing required key '" + required + "'");
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError(where + ": unsupported schema_version " + std::to_string(c.schema_version));
  try {
    c.adapt.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace adacontrast

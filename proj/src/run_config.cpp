#include "metammf/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace metammf {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t to_count(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string real_text(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto count = [&f](std::string key, std::size_t TrainConfig::*member) {
      f.push_back({key, [key, member](RunConfig& c, std::string_view v) { c.train.*member = to_count(key, v); },
                   [member](const RunConfig& c) { return std::to_string(c.train.*member); }});
    };
    auto real = [&f](std::string key, double TrainConfig::*member) {
      f.push_back({key, [key, member](RunConfig& c, std::string_view v) { c.train.*member = to_real(key, v); },
                   [member](const RunConfig& c) { return real_text(c.train.*member); }});
    };
    real("train.lr", &TrainConfig::learning_rate);
    real("train.l2", &TrainConfig::l2);
    count("train.batch", &TrainConfig::batch_size);
    count("train.epochs", &TrainConfig::max_epochs);
    count("train.patience", &TrainConfig::patience);
    count("train.k", &TrainConfig::eval_k);
    f.push_back({"train.seed", [](RunConfig& c, std::string_view v) { c.train.seed = to_count("train.seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    f.push_back({"fusion.mode", [](RunConfig& c, std::string_view v) { c.train.mode = parse_fusion_mode(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.train.mode)); }});
    count("fusion.layers", &TrainConfig::fusion_layers);
    count("fusion.meta_dim", &TrainConfig::meta_dim);
    count("fusion.meta_hidden", &TrainConfig::meta_hidden);
    count("fusion.dm", &TrainConfig::fused_dim);
    count("fusion.rank", &TrainConfig::rank);
    real("fusion.slope", &TrainConfig::leaky_slope);
    f.push_back({"model.head", [](RunConfig& c, std::string_view v) { c.train.head = parse_head(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.train.head)); }});
    count("model.dc", &TrainConfig::collab_dim);
    count("gcn.layers", &TrainConfig::gcn_layers);
    f.push_back({"gcn.per_type", [](RunConfig& c, std::string_view v) { c.train.gcn_per_type = to_bool("gcn.per_type", v); },
                 [](const RunConfig& c) { return std::string(c.train.gcn_per_type ? "true" : "false"); }});
    f.push_back({"data.dir", [](RunConfig& c, std::string_view v) { c.data_dir = std::string(v); },
                 [](const RunConfig& c) { return c.data_dir; }});
    f.push_back({"out.dir", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
                 [](const RunConfig& c) { return c.out_dir; }});
    f.push_back({"eval.k", [](RunConfig& c, std::string_view v) { c.eval_ks = parse_k_list(v); },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t k : c.eval_ks) s += (s.empty() ? "" : ",") + std::to_string(k);
                   return s;
                 }});
    return f;
  }();
  return table;
}

}  // namespace

std::vector<std::size_t> parse_k_list(std::string_view text) {
  std::vector<std::size_t> ks;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string_view part = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    const std::size_t k = to_count("eval.k", part);
    if (k == 0) throw ConfigError("eval.k: cutoffs must be at least 1");
    ks.push_back(k);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return ks;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  auto need = [&problems](bool ok, const char* msg) {
    if (!ok) problems.emplace_back(msg);
  };
  need(train.learning_rate >= 0.0, "train.lr must be >= 0");
  need(train.l2 >= 0.0, "train.l2 must be >= 0");
  need(train.batch_size > 0, "train.batch must be positive");
  need(train.max_epochs > 0, "train.epochs must be positive");
  need(train.patience > 0, "train.patience must be positive");
  need(train.eval_k > 0, "train.k must be positive");
  need(train.fusion_layers > 0, "fusion.layers must be positive");
  need(train.meta_dim > 0, "fusion.meta_dim must be positive");
  need(train.meta_hidden > 0, "fusion.meta_hidden must be positive");
  need(train.fused_dim > 0, "fusion.dm must be positive");
  need(train.rank > 0, "fusion.rank must be positive");
  need(train.leaky_slope >= 0.0 && train.leaky_slope < 1.0, "fusion.slope must be in [0, 1)");
  need(train.gcn_layers > 0, "gcn.layers must be positive");
  need(!eval_ks.empty(), "eval.k must list at least one cutoff");
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return names;
}

RunConfig parse_run_config(std::string_view text, std::span<const std::string> overrides) {
  RunConfig cfg;
  std::vector<std::string> problems;
  auto apply = [&](std::string_view line, const std::string& where) {
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      problems.push_back(where + ": expected key=value");
      return;
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::exception& e) {
      problems.push_back(where + ": " + e.what());
    }
  };
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    const std::string_view line = trim(text.substr(start, nl - start));
    start = nl + 1;
    if (line.empty() || line.front() == '#') continue;
    apply(line, "line " + std::to_string(line_no));
  }
  for (const auto& o : overrides) apply(trim(o), "override '" + o + "'");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    problems.emplace_back(e.what());
  }
  if (!problems.empty()) {
    std::string msg = "configuration errors:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file, std::span<const std::string> overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), overrides);
}

}  // namespace metammf

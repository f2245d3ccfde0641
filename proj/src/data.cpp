#include "metammf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "metammf/random.hpp"

namespace metammf {

namespace fs = std::filesystem;

namespace {

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(line.substr(start));
      return parts;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void fail(const fs::path& file, std::size_t line, const std::string& msg) {
  throw FormatError(file.filename().string() + ":" + std::to_string(line) + ": " + msg);
}

double parse_real(std::string_view text, const fs::path& file, std::size_t line) {
  const std::string buf(text);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (buf.empty() || end != buf.c_str() + buf.size()) fail(file, line, "not a number: '" + buf + "'");
  if (!std::isfinite(v)) fail(file, line, "non-finite feature value");
  return v;
}

std::size_t parse_count(std::string_view text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("not a non-negative integer: '" + std::string(text) + "'");
  }
  return v;
}

struct FeatureFile {
  std::size_t dim = 0;
  std::vector<std::pair<std::string, Vector>> rows;
};

FeatureFile read_feature_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  FeatureFile file;
  std::string raw;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim_cr(raw);
    if (line.empty()) continue;
    const auto parts = split_on(line, ',');
    if (!have_header) {
      if (parts.size() != 2 || parts[0] != "item_id" || parts[1].substr(0, 4) != "dim=") {
        fail(path, line_no, "expected header 'item_id,dim=<d>'");
      }
      try {
        file.dim = parse_count(parts[1].substr(4));
      } catch (const ConfigError&) {
        fail(path, line_no, "bad dimension in header");
      }
      if (file.dim == 0) fail(path, line_no, "dimension must be positive");
      have_header = true;
      continue;
    }
    if (parts.size() != file.dim + 1) {
      fail(path, line_no, "expected " + std::to_string(file.dim) + " values, found " + std::to_string(parts.size() - 1));
    }
    std::string id(parts[0]);
    if (id.empty()) fail(path, line_no, "empty item id");
    if (!seen.insert(id).second) fail(path, line_no, "duplicate feature row for item '" + id + "'");
    Vector values(file.dim);
    for (std::size_t k = 0; k < file.dim; ++k) values[k] = parse_real(parts[k + 1], path, line_no);
    file.rows.emplace_back(std::move(id), std::move(values));
  }
  if (!have_header) fail(path, line_no, "missing header");
  return file;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double standard_logistic(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double p = unit(rng);
  while (p <= 0.0) p = unit(rng);
  return std::log(p / (1.0 - p));
}

}  // namespace

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::visual: return "visual";
    case Modality::acoustic: return "acoustic";
    case Modality::textual: return "textual";
  }
  return "?";
}

std::size_t Dataset::feature_dim() const {
  std::size_t d = 0;
  for (const auto& f : features) {
    if (f) d += f->cols;
  }
  return d;
}

Matrix Dataset::concatenated_features() const {
  Matrix out(num_items(), feature_dim());
  std::size_t offset = 0;
  for (const auto& f : features) {
    if (!f) continue;
    for (std::size_t i = 0; i < num_items(); ++i) {
      const auto src = f->row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += f->cols;
  }
  return out;
}

ItemModalities Dataset::item(std::size_t i) const {
  ItemModalities item;
  std::optional<Vector>* slots[3] = {&item.visual, &item.acoustic, &item.textual};
  for (std::size_t m = 0; m < 3; ++m) {
    if (features[m]) {
      const auto row = features[m]->row(i);
      *slots[m] = Vector(row.begin(), row.end());
    }
  }
  return item;
}

UserLists Dataset::by_user() const {
  UserLists lists(num_users());
  for (const auto& [u, i] : interactions) lists[u].push_back(i);
  for (auto& l : lists) std::sort(l.begin(), l.end());
  return lists;
}

void Dataset::validate() const {
  if (feature_dim() == 0) throw std::logic_error("dataset has no modality features");
  for (const auto& f : features) {
    if (f && f->rows != num_items()) throw std::logic_error("feature table rows differ from item count");
    if (f) require_finite(f->data, "features");
  }
  for (std::size_t k = 0; k < interactions.size(); ++k) {
    const auto& [u, i] = interactions[k];
    if (u >= num_users() || i >= num_items()) throw std::logic_error("interaction index out of range");
    if (k > 0 && !(interactions[k - 1] < interactions[k])) throw std::logic_error("interactions not unique and sorted");
  }
}

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  std::unordered_map<std::string, std::uint32_t> item_index;
  std::array<std::optional<FeatureFile>, 3> files;
  for (Modality m : kModalities) {
    const fs::path path = dir / (std::string(to_string(m)) + ".csv");
    if (!fs::exists(path)) continue;
    files[static_cast<std::size_t>(m)] = read_feature_file(path);
    for (const auto& [id, values] : files[static_cast<std::size_t>(m)]->rows) {
      if (item_index.emplace(id, static_cast<std::uint32_t>(data.item_ids.size())).second) data.item_ids.push_back(id);
    }
  }
  if (std::none_of(files.begin(), files.end(), [](const auto& f) { return f.has_value(); })) {
    throw FormatError("no visual.csv, acoustic.csv or textual.csv in " + dir.string());
  }
  for (Modality m : kModalities) {
    auto& file = files[static_cast<std::size_t>(m)];
    if (!file) continue;
    Matrix table(data.item_ids.size(), file->dim);
    std::vector<bool> present(data.item_ids.size(), false);
    for (const auto& [id, values] : file->rows) {
      const std::uint32_t i = item_index.at(id);
      std::copy(values.begin(), values.end(), table.row(i).begin());
      present[i] = true;
    }
    for (std::size_t i = 0; i < present.size(); ++i) {
      if (!present[i]) {
        throw FormatError(std::string(to_string(m)) + ".csv: feature row missing for item '" + data.item_ids[i] + "'");
      }
    }
    data.features[static_cast<std::size_t>(m)] = std::move(table);
  }

  const fs::path path = dir / "interactions.tsv";
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::unordered_map<std::string, std::uint32_t> user_index;
  std::set<Interaction> pairs;
  std::size_t duplicates = 0;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim_cr(raw);
    if (line.empty()) continue;
    const auto parts = split_on(line, '\t');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) fail(path, line_no, "expected 'user<TAB>item'");
    const std::string user(parts[0]);
    const std::string item(parts[1]);
    const auto it = item_index.find(item);
    if (it == item_index.end()) fail(path, line_no, "feature row missing for item '" + item + "'");
    const auto [uit, inserted] = user_index.emplace(user, static_cast<std::uint32_t>(data.user_ids.size()));
    if (inserted) data.user_ids.push_back(user);
    if (!pairs.emplace(uit->second, it->second).second) ++duplicates;
  }
  if (duplicates > 0) {
    std::cerr << "warning: " << path.filename().string() << ": dropped " << duplicates << " duplicate interaction"
              << (duplicates == 1 ? "" : "s") << '\n';
  }
  data.interactions.assign(pairs.begin(), pairs.end());
  data.validate();
  return data;
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  {
    const fs::path path = dir / "interactions.tsv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& [u, i] : data.interactions) out << data.user_ids[u] << '\t' << data.item_ids[i] << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
  for (Modality m : kModalities) {
    const auto& table = data.features[static_cast<std::size_t>(m)];
    if (!table) continue;
    const fs::path path = dir / (std::string(to_string(m)) + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "item_id,dim=" << table->cols << '\n';
    for (std::size_t i = 0; i < data.num_items(); ++i) {
      out << data.item_ids[i];
      for (double v : table->row(i)) out << ',' << format_real(v);
      out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
}

std::vector<Interaction> Split::train_pairs() const {
  std::vector<Interaction> pairs;
  for (std::size_t u = 0; u < train.size(); ++u) {
    for (std::uint32_t i : train[u]) pairs.emplace_back(static_cast<std::uint32_t>(u), i);
  }
  return pairs;
}

Split split_dataset(const Dataset& data, std::uint64_t seed) {
  Rng rng = make_stream(seed, "split");
  const UserLists lists = data.by_user();
  Split split;
  split.train.resize(lists.size());
  split.validation.resize(lists.size());
  split.test.resize(lists.size());
  for (std::size_t u = 0; u < lists.size(); ++u) {
    std::vector<std::uint32_t> items = lists[u];
    const std::size_t n = items.size();
    if (n < 3) {
      split.train[u] = items;
      continue;
    }
    std::shuffle(items.begin(), items.end(), rng);
    const std::size_t held = std::max<std::size_t>(1, n / 10);
    const auto first = items.begin();
    split.validation[u].assign(first, first + static_cast<std::ptrdiff_t>(held));
    split.test[u].assign(first + static_cast<std::ptrdiff_t>(held), first + static_cast<std::ptrdiff_t>(2 * held));
    split.train[u].assign(first + static_cast<std::ptrdiff_t>(2 * held), items.end());
    for (auto* l : {&split.train[u], &split.validation[u], &split.test[u]}) std::sort(l->begin(), l->end());
  }
  return split;
}

std::vector<std::vector<Modality>> SynthSpec::assignment() const {
  if (!informative.empty()) return informative;
  std::vector<std::vector<Modality>> out(clusters);
  if (clusters == 0) return out;
  for (Modality m : kModalities) out[static_cast<std::size_t>(m) % clusters].push_back(m);
  return out;
}

void SynthSpec::validate() const {
  if (clusters < 2) throw ConfigError("synthetic spec: need at least 2 clusters");
  if (users == 0 || items == 0 || latent_dim == 0) throw ConfigError("synthetic spec: sizes must be positive");
  if (interactions_per_user == 0 || interactions_per_user > items) {
    throw ConfigError("synthetic spec: interactions per user must be in [1, items]");
  }
  if (noise < 0.0 || preference_noise < 0.0) throw ConfigError("synthetic spec: noise must be non-negative");
  const auto assign = assignment();
  if (assign.size() != clusters) throw ConfigError("synthetic spec: informative assignment needs one entry per cluster");
  std::array<bool, 3> covered{};
  for (const auto& mods : assign) {
    for (Modality m : mods) covered[static_cast<std::size_t>(m)] = true;
  }
  for (Modality m : kModalities) {
    const std::size_t k = static_cast<std::size_t>(m);
    if (dims[k] > 0 && !covered[k]) {
      throw ConfigError("synthetic spec: modality " + std::string(to_string(m)) + " is informative for no cluster");
    }
    if (dims[k] == 0 && covered[k]) {
      throw ConfigError("synthetic spec: modality " + std::string(to_string(m)) + " is informative but has dim 0");
    }
  }
}

void SynthSpec::set(std::string_view key, std::string_view value) {
  auto real = [&] {
    const std::string buf(value);
    char* end = nullptr;
    const double v = std::strtod(buf.c_str(), &end);
    if (buf.empty() || end != buf.c_str() + buf.size()) throw ConfigError("synthetic spec: bad number for " + std::string(key));
    return v;
  };
  if (key == "users") users = parse_count(value);
  else if (key == "items") items = parse_count(value);
  else if (key == "clusters") clusters = parse_count(value);
  else if (key == "latent_dim" || key == "latent") latent_dim = parse_count(value);
  else if (key == "visual_dim") dims[0] = parse_count(value);
  else if (key == "acoustic_dim") dims[1] = parse_count(value);
  else if (key == "textual_dim") dims[2] = parse_count(value);
  else if (key == "noise") noise = real();
  else if (key == "preference_noise") preference_noise = real();
  else if (key == "interactions_per_user" || key == "interactions") interactions_per_user = parse_count(value);
  else if (key == "seed") seed = parse_count(value);
  else if (key == "informative") {
    informative.clear();
    for (std::string_view group : split_on(value, '|')) {
      std::vector<Modality> mods;
      for (char c : group) {
        if (c == 'v') mods.push_back(Modality::visual);
        else if (c == 'a') mods.push_back(Modality::acoustic);
        else if (c == 't') mods.push_back(Modality::textual);
        else throw ConfigError("synthetic spec: informative expects letters v, a, t");
      }
      informative.push_back(std::move(mods));
    }
  } else {
    throw ConfigError("synthetic spec: unknown key '" + std::string(key) + "'");
  }
}

SyntheticData generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const auto assign = spec.assignment();
  const std::size_t latent = spec.latent_dim;
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticData out;
  Rng enc_rng = make_stream(spec.seed, "synth.encoders");
  for (Modality m : kModalities) {
    const std::size_t k = static_cast<std::size_t>(m);
    out.encoders[k] = Matrix(spec.dims[k], latent);
    const double scale = 1.0 / std::sqrt(static_cast<double>(latent));
    for (double& v : out.encoders[k].data) v = scale * normal(enc_rng);
  }

  Rng item_rng = make_stream(spec.seed, "synth.items");
  out.item_latents = Matrix(spec.items, latent);
  out.item_cluster.resize(spec.items);
  for (std::size_t i = 0; i < spec.items; ++i) {
    out.item_cluster[i] = static_cast<int>(i % spec.clusters);
    for (double& v : out.item_latents.row(i)) v = normal(item_rng);
  }

  Dataset& data = out.dataset;
  for (std::size_t i = 0; i < spec.items; ++i) data.item_ids.push_back("i" + std::to_string(i));
  for (std::size_t u = 0; u < spec.users; ++u) data.user_ids.push_back("u" + std::to_string(u));

  Rng feat_rng = make_stream(spec.seed, "synth.features");
  for (Modality m : kModalities) {
    const std::size_t k = static_cast<std::size_t>(m);
    if (spec.dims[k] == 0) continue;
    const Matrix& enc = out.encoders[k];
    // per-row standard deviation of an informative entry, matched by the noise-only rows
    Vector row_sd(spec.dims[k]);
    for (std::size_t r = 0; r < spec.dims[k]; ++r) {
      row_sd[r] = std::sqrt(dot(enc.row(r), enc.row(r)) + spec.noise * spec.noise);
    }
    Matrix table(spec.items, spec.dims[k]);
    for (std::size_t i = 0; i < spec.items; ++i) {
      const auto& mods = assign[static_cast<std::size_t>(out.item_cluster[i])];
      const bool informative = std::find(mods.begin(), mods.end(), m) != mods.end();
      auto dst = table.row(i);
      if (informative) {
        const Vector x = matvec(enc, out.item_latents.row(i));
        for (std::size_t r = 0; r < x.size(); ++r) dst[r] = x[r] + spec.noise * normal(feat_rng);
      } else {
        for (std::size_t r = 0; r < dst.size(); ++r) dst[r] = row_sd[r] * normal(feat_rng);
      }
    }
    data.features[k] = std::move(table);
  }

  Rng user_rng = make_stream(spec.seed, "synth.users");
  out.user_latents = Matrix(spec.users, latent);
  for (double& v : out.user_latents.data) v = normal(user_rng);

  Rng pref_rng = make_stream(spec.seed, "synth.preferences");
  Vector scores(spec.items);
  std::vector<std::uint32_t> order(spec.items);
  for (std::size_t u = 0; u < spec.users; ++u) {
    for (std::size_t i = 0; i < spec.items; ++i) {
      scores[i] = dot(out.user_latents.row(u), out.item_latents.row(i)) + spec.preference_noise * standard_logistic(pref_rng);
    }
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.interactions_per_user), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
    std::vector<std::uint32_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.interactions_per_user));
    std::sort(chosen.begin(), chosen.end());
    for (std::uint32_t i : chosen) data.interactions.emplace_back(static_cast<std::uint32_t>(u), i);
  }
  data.validate();
  return out;
}

}  // namespace metammf

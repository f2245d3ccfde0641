#include "metammf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace metammf {

namespace {

constexpr char kMagic[] = "MMFC1";
constexpr std::size_t kMagicLen = 5;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * k);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint: length mismatch (file truncated)");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string shape_echo(const Model& model) {
  return "shape.users=" + std::to_string(model.config.num_users) + "\nshape.items=" +
         std::to_string(model.config.num_items) + "\nshape.input_dim=" + std::to_string(model.config.fusion.input_dim) +
         "\n";
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad value for " + key);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const RunConfig& config) {
  Writer w;
  w.bytes(kMagic, kMagicLen);
  const std::string echo = config.to_text() + shape_echo(model);
  w.u64(echo.size());
  w.bytes(echo.data(), echo.size());
  const auto params = model.params();
  w.u64(params.size());
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u32(static_cast<std::uint32_t>(p.dims.size()));
    for (std::size_t d : p.dims) w.u64(d);
  }
  for (const auto& p : params) {
    for (double v : p.values) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError("checkpoint: bad magic (expected MMFC1)");
  }
  r.bytes(kMagicLen);
  const std::uint64_t echo_len = r.u64();
  if (echo_len > r.remaining()) throw FormatError("checkpoint: length mismatch in config block");
  const auto echo_bytes = r.bytes(echo_len);
  const std::string echo(echo_bytes.begin(), echo_bytes.end());

  // split the echo into run-config lines and shape lines
  std::string run_text;
  std::optional<std::size_t> users, items, input_dim;
  std::size_t start = 0;
  while (start < echo.size()) {
    std::size_t nl = echo.find('\n', start);
    if (nl == std::string::npos) nl = echo.size();
    const std::string line = echo.substr(start, nl - start);
    start = nl + 1;
    if (line.rfind("shape.", 0) == 0) {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("checkpoint: malformed shape line '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::size_t v = parse_size(key, line.substr(eq + 1));
      if (key == "shape.users") users = v;
      else if (key == "shape.items") items = v;
      else if (key == "shape.input_dim") input_dim = v;
      else throw ConfigError("checkpoint: unknown config key '" + key + "'");
    } else {
      run_text += line + "\n";
    }
  }
  if (!users || !items || !input_dim) throw FormatError("checkpoint: config echo lacks shape.* entries");

  Checkpoint ck;
  ck.config = parse_run_config(run_text);
  ck.model = Model(make_model_config(ck.config.train, *users, *items, *input_dim));

  const auto params = ck.model.params();
  const std::uint64_t count = r.u64();
  if (count != params.size()) {
    throw FormatError("checkpoint: manifest lists " + std::to_string(count) + " arrays, model expects " +
                      std::to_string(params.size()));
  }
  std::uint64_t expected_values = 0;
  for (const auto& p : params) {
    const std::uint32_t name_len = r.u32();
    const auto name_bytes = r.bytes(name_len);
    const std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u64();
    if (name != p.name || dims != p.dims) throw FormatError("checkpoint: manifest entry '" + name + "' does not match model array '" + p.name + "'");
    expected_values += p.values.size();
  }
  if (r.remaining() != expected_values * 8) {
    throw FormatError("checkpoint: length mismatch (payload has " + std::to_string(r.remaining()) + " bytes, manifest needs " +
                      std::to_string(expected_values * 8) + ")");
  }
  for (const auto& p : params) {
    for (double& v : p.values) v = r.f64();
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& file, const Model& model, const RunConfig& config) {
  const auto bytes = encode_checkpoint(model, config);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + file.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& file, FusionMode expected) {
  Checkpoint ck = load_checkpoint(file);
  if (ck.config.train.mode != expected) {
    throw ModeError("checkpoint was trained in fusion mode '" + std::string(to_string(ck.config.train.mode)) +
                    "' but '" + std::string(to_string(expected)) + "' was requested");
  }
  return ck;
}

}  // namespace metammf

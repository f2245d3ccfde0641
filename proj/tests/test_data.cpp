#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "metammf/checkpoint.hpp"
#include "metammf/data.hpp"
#include "metammf/errors.hpp"
#include "metammf/run_config.hpp"
#include "metammf/training.hpp"

using namespace metammf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 gen(std::random_device{}());
    path = fs::temp_directory_path() / ("metammf_test_" + std::to_string(gen()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_tiny(const fs::path& dir) {
  write_file(dir / "visual.csv", "item_id,dim=2\nA,1,2\nB,3,4\nC,5,6\n");
  write_file(dir / "textual.csv", "item_id,dim=1\nC,0.5\nA,-1\nB,2\n");
  write_file(dir / "interactions.tsv", "u9\tB\nu1\tA\nu9\tC\n");
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.users = 30;
  spec.items = 40;
  spec.dims = {6, 6, 6};
  spec.latent_dim = 3;
  spec.interactions_per_user = 10;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("load a tiny dataset") {
  TempDir tmp;
  write_tiny(tmp.path);
  const Dataset d = load_dataset(tmp.path);
  CHECK(d.user_ids == std::vector<std::string>{"u9", "u1"});
  CHECK(d.item_ids == std::vector<std::string>{"A", "B", "C"});
  CHECK(d.feature_dim() == 3);
  CHECK_FALSE(d.features[1].has_value());
  const Matrix x = d.concatenated_features();
  CHECK(x.data == Vector{1, 2, -1, 3, 4, 2, 5, 6, 0.5});
  CHECK(d.interactions == std::vector<Interaction>{{0, 1}, {0, 2}, {1, 0}});
  const ItemModalities item = d.item(2);
  CHECK(item.visual == Vector{5, 6});
  CHECK_FALSE(item.acoustic.has_value());
}

TEST_CASE("duplicate interactions are dropped with a warning") {
  TempDir tmp;
  write_tiny(tmp.path);
  write_file(tmp.path / "interactions.tsv", "u\tA\nu\tA\nu\tB\n");
  std::ostringstream captured;
  auto* old = std::cerr.rdbuf(captured.rdbuf());
  const Dataset d = load_dataset(tmp.path);
  std::cerr.rdbuf(old);
  CHECK(d.interactions.size() == 2);
  CHECK(captured.str().find("duplicate") != std::string::npos);
}

TEST_CASE("malformed input names the file and line") {
  TempDir tmp;
  write_tiny(tmp.path);
  write_file(tmp.path / "visual.csv", "item_id,dim=2\nA,1,2\nB,3,oops\nC,5,6\n");
  const std::string bad_value = error_of([&] { load_dataset(tmp.path); });
  CHECK(bad_value.find("visual.csv:3") != std::string::npos);
  CHECK_THROWS_AS(load_dataset(tmp.path), FormatError);

  write_tiny(tmp.path);
  write_file(tmp.path / "visual.csv", "item_id,dim=3\nA,1,2\nB,3,4\nC,5,6\n");
  CHECK(error_of([&] { load_dataset(tmp.path); }).find("visual.csv:2") != std::string::npos);

  write_tiny(tmp.path);
  write_file(tmp.path / "textual.csv", "item_id,dim=1\nC,0.5\nA,-1\n");
  CHECK(error_of([&] { load_dataset(tmp.path); }).find("missing for item 'B'") != std::string::npos);

  write_tiny(tmp.path);
  write_file(tmp.path / "interactions.tsv", "u\tA\nu\tZ\n");
  CHECK(error_of([&] { load_dataset(tmp.path); }).find("interactions.tsv:2") != std::string::npos);

  write_tiny(tmp.path);
  write_file(tmp.path / "interactions.tsv", "u A\n");
  CHECK_THROWS_AS(load_dataset(tmp.path), FormatError);

  fs::remove(tmp.path / "visual.csv");
  fs::remove(tmp.path / "textual.csv");
  CHECK_THROWS_AS(load_dataset(tmp.path), FormatError);
}

TEST_CASE("save and load round trip") {
  TempDir tmp;
  const SyntheticData s = generate_synthetic(small_spec(4));
  save_dataset(s.dataset, tmp.path);
  const Dataset back = load_dataset(tmp.path);
  CHECK(back.user_ids == s.dataset.user_ids);
  CHECK(back.item_ids == s.dataset.item_ids);
  CHECK(back.interactions == s.dataset.interactions);
  for (std::size_t m = 0; m < 3; ++m) {
    REQUIRE(back.features[m].has_value());
    const auto& a = back.features[m]->data;
    const auto& b = s.dataset.features[m]->data;
    double worst = 0;
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]) / std::max(1.0, std::abs(b[k])));
    CHECK(worst <= 1e-8);
  }
}

TEST_CASE("split proportions") {
  Dataset d;
  d.item_ids.resize(12);
  for (std::size_t i = 0; i < 12; ++i) d.item_ids[i] = std::to_string(i);
  d.user_ids = {"ten", "two"};
  d.features[0] = Matrix(12, 1);
  for (std::uint32_t i = 0; i < 10; ++i) d.interactions.push_back({0, i});
  d.interactions.push_back({1, 0});
  d.interactions.push_back({1, 1});
  const Split s = split_dataset(d, 7);
  CHECK(s.train[0].size() == 8);
  CHECK(s.validation[0].size() == 1);
  CHECK(s.test[0].size() == 1);
  CHECK(s.train[1] == std::vector<std::uint32_t>{0, 1});
  CHECK(s.validation[1].empty());
  CHECK(s.test[1].empty());

  const Split again = split_dataset(d, 7);
  CHECK(again.validation == s.validation);
  CHECK(again.test == s.test);
}

TEST_CASE("split of a synthetic dataset is a disjoint cover") {
  const SyntheticData s = generate_synthetic(small_spec(5));
  const Split split = split_dataset(s.dataset, 5);
  const UserLists all = s.dataset.by_user();
  for (std::size_t u = 0; u < all.size(); ++u) {
    std::vector<std::uint32_t> joined;
    for (const auto* l : {&split.train[u], &split.validation[u], &split.test[u]}) joined.insert(joined.end(), l->begin(), l->end());
    std::sort(joined.begin(), joined.end());
    CHECK(joined == all[u]);
    CHECK(std::adjacent_find(joined.begin(), joined.end()) == joined.end());
    CHECK(split.validation[u].size() == std::max<std::size_t>(1, all[u].size() / 10));
  }
  CHECK(split.train_pairs().size() + 2 * all.size() == s.dataset.interactions.size());
}

TEST_CASE("synthetic features encode the latent in informative modalities only") {
  SynthSpec spec = small_spec(6);
  spec.noise = 0.0;
  const SyntheticData s = generate_synthetic(spec);
  const auto assign = spec.assignment();
  double on = 0, off = 0;
  std::size_t n_on = 0, n_off = 0;
  for (std::size_t i = 0; i < spec.items; ++i) {
    const auto& informative = assign[static_cast<std::size_t>(s.item_cluster[i])];
    for (Modality m : kModalities) {
      const std::size_t mi = static_cast<std::size_t>(m);
      const Vector decoded = matvec(s.encoders[mi], s.item_latents.row(i));
      double r = 0;
      for (std::size_t c = 0; c < decoded.size(); ++c) r += std::pow(s.dataset.features[mi]->data[i * decoded.size() + c] - decoded[c], 2);
      r = std::sqrt(r);
      if (std::find(informative.begin(), informative.end(), m) != informative.end()) {
        on = std::max(on, r);
        ++n_on;
      } else {
        off += r;
        ++n_off;
      }
    }
  }
  REQUIRE(n_on > 0);
  REQUIRE(n_off > 0);
  CHECK(on < 1e-8);
  CHECK(off / static_cast<double>(n_off) >= 10 * std::max(on, 1e-9));
}

TEST_CASE("synthetic generation is seeded and validated") {
  const SyntheticData a = generate_synthetic(small_spec(9));
  const SyntheticData b = generate_synthetic(small_spec(9));
  const SyntheticData c = generate_synthetic(small_spec(10));
  CHECK(a.dataset.interactions == b.dataset.interactions);
  CHECK(a.dataset.features[0]->data == b.dataset.features[0]->data);
  CHECK(a.dataset.features[0]->data != c.dataset.features[0]->data);
  for (const auto& l : a.dataset.by_user()) CHECK(l.size() == 10);

  SynthSpec three = small_spec(1);
  three.clusters = 3;
  const SyntheticData t = generate_synthetic(three);
  CHECK(*std::max_element(t.item_cluster.begin(), t.item_cluster.end()) == 2);
  CHECK(three.assignment()[2] == std::vector<Modality>{Modality::textual});

  SynthSpec s;
  s.set("users", "12");
  s.set("informative", "v|at");
  CHECK(s.users == 12);
  CHECK(s.assignment()[1] == std::vector<Modality>{Modality::acoustic, Modality::textual});
  CHECK_THROWS_AS(s.set("colour", "1"), ConfigError);
  CHECK_THROWS_AS(s.set("users", "x"), ConfigError);
  s.clusters = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("run config parsing") {
  const RunConfig def = parse_run_config("");
  CHECK(parse_run_config(def.to_text()).to_text() == def.to_text());

  const std::string over[] = {"train.lr=0.5", "eval.k=5,15"};
  const RunConfig cfg = parse_run_config("# comment\n\ntrain.lr = 0.1\nfusion.mode=dynamic-cp\n", over);
  CHECK(cfg.train.learning_rate == 0.5);
  CHECK(cfg.train.mode == FusionMode::dynamic_cp);
  CHECK(cfg.eval_ks == std::vector<std::size_t>{5, 15});

  const std::string msg = error_of([] { parse_run_config("bogus.key=1\ntrain.batch=abc\ntrain.epochs=0\n"); });
  CHECK(msg.find("bogus.key") != std::string::npos);
  CHECK(msg.find("train.batch") != std::string::npos);
  CHECK(msg.find("train.epochs") != std::string::npos);
  CHECK_THROWS_AS(parse_run_config("fusion.mode=sideways\n"), ConfigError);
  CHECK_THROWS_AS(parse_k_list("10,0"), ConfigError);
  CHECK(parse_k_list(" 3 , 4") == std::vector<std::size_t>{3, 4});
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir tmp;
  RunConfig cfg;
  cfg.train.fused_dim = 4;
  cfg.train.collab_dim = 4;
  cfg.train.meta_hidden = 5;
  cfg.train.meta_dim = 3;
  cfg.train.mode = FusionMode::dynamic_cp;
  Model m(make_model_config(cfg.train, 3, 5, 9));
  Rng rng = make_stream(1, "init");
  initialize(m, rng);

  const fs::path first = tmp.path / "a.ckpt";
  const fs::path second = tmp.path / "b.ckpt";
  save_checkpoint(first, m, cfg);
  const Checkpoint ck = load_checkpoint(first);
  save_checkpoint(second, ck.model, ck.config);
  CHECK(read_file(first) == read_file(second));
  CHECK(ck.config.to_text() == cfg.to_text());
  CHECK(ck.model.parameter_count() == m.parameter_count());

  CHECK_THROWS_AS(load_checkpoint(first, FusionMode::dynamic_full), ModeError);
  CHECK_NOTHROW(load_checkpoint(first, FusionMode::dynamic_cp));

  const std::vector<std::uint8_t> bytes = encode_checkpoint(m, cfg);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 8);
  CHECK(error_of([&] { decode_checkpoint(cut); }).find("length mismatch") != std::string::npos);

  std::vector<std::uint8_t> magic = bytes;
  magic[0] = 'X';
  CHECK(error_of([&] { decode_checkpoint(magic); }).find("bad magic") != std::string::npos);

  std::string text = read_file(first);
  const std::size_t at = text.find("train.lr=");
  REQUIRE(at != std::string::npos);
  text.replace(at, 8, "train.zz");
  write_file(first, text);
  CHECK_THROWS_AS(load_checkpoint(first), ConfigError);
}

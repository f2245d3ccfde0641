#include <doctest.h>

#include <cmath>

#include "metammf/errors.hpp"
#include "metammf/fusion.hpp"
#include "metammf/gradcheck.hpp"
#include "oracles.hpp"

using namespace metammf;

namespace {

FusionStack random_stack(FusionMode mode, std::size_t D, std::size_t dm, std::size_t layers, std::mt19937_64& rng,
                         std::size_t meta_dim = 2, std::size_t rank = 2) {
  FusionConfig cfg;
  cfg.mode = mode;
  cfg.input_dim = D;
  cfg.output_dim = dm;
  cfg.layers = layers;
  cfg.meta_dim = meta_dim;
  cfg.meta_hidden = 5;
  cfg.rank = rank;
  FusionStack s(cfg);
  for (auto& p : s.params()) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (double& v : p.values) v = d(rng);
  }
  if (!s.extractor.empty()) {
    for (auto* b : {&s.extractor.b_in, &s.extractor.b_mid, &s.extractor.b_out}) oracle::fill(*b, rng, 0.1, 1.0);
  }
  return s;
}

constexpr FusionMode kModes[] = {FusionMode::static_weights, FusionMode::dynamic_full, FusionMode::dynamic_cp,
                                 FusionMode::dynamic_no_static};

}  // namespace

TEST_CASE("tower sequences from the paper") {
  CHECK(build_tower(2276, 32, 4).widths == std::vector<std::size_t>{2276, 1024, 512, 256, 32});
  CHECK(build_tower(384, 32, 1).widths == std::vector<std::size_t>{384, 32});
  CHECK(build_tower(2176, 32, 1).widths == std::vector<std::size_t>{2176, 32});
}

TEST_CASE("tower validity over a grid of shapes") {
  for (std::size_t layers = 1; layers <= 6; ++layers) {
    for (std::size_t D : {1u, 7u, 32u, 33u, 100u, 1000u, 2276u, 4096u}) {
      for (std::size_t dm : {1u, 4u, 32u}) {
        if (dm > D) continue;
        const TowerShape t = build_tower(D, dm, layers);
        CAPTURE(D);
        CAPTURE(dm);
        CAPTURE(layers);
        CHECK_NOTHROW(t.validate());
        CHECK(t.layers() == layers);
        CHECK(t.input_dim() == D);
        CHECK(t.output_dim() == dm);
      }
    }
  }
  CHECK_THROWS_AS(build_tower(10, 32, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_tower(64, 32, 0), std::invalid_argument);
}

TEST_CASE("mode names round-trip") {
  for (FusionMode m : kModes) CHECK(parse_fusion_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_fusion_mode("dynamic"), ConfigError);
}

TEST_CASE("item modalities concatenate in visual, acoustic, textual order") {
  ItemModalities item;
  item.visual = Vector{1, 2};
  item.textual = Vector{5};
  CHECK(item.dim() == 3);
  CHECK(item.concat() == Vector{1, 2, 5});
  CHECK_THROWS_AS(ItemModalities{}.concat(), DimensionError);
  item.acoustic = Vector{NAN};
  CHECK_THROWS_AS(item.concat(), NumericError);
}

TEST_CASE("extract_meta") {
  SUBCASE("zero extractor gives zero meta") {
    const MetaExtractor e(4, 3, 2);
    CHECK(extract_meta(Vector{1, -2, 3, 4}, e) == Vector{0, 0});
  }
  SUBCASE("rectifier kills a negative input") {
    MetaExtractor e(1, 1, 1);
    e.w_in(0, 0) = e.w_mid(0, 0) = e.w_out(0, 0) = 1.0;
    CHECK(extract_meta(Vector{-2.0}, e) == Vector{0.0});
    CHECK(extract_meta(Vector{2.0}, e) == Vector{2.0});
  }
  SUBCASE("matches the straight-line oracle") {
    std::mt19937_64 rng(11);
    MetaExtractor e(6, 5, 3);
    for (auto* m : {&e.w_in.data, &e.b_in, &e.w_mid.data, &e.b_mid, &e.w_out.data, &e.b_out}) oracle::fill(*m, rng);
    const Vector x = oracle::random_vector(6, rng);
    CHECK(extract_meta(x, e) == oracle::meta(e, x));
  }
  CHECK_THROWS_AS(extract_meta(Vector(3), MetaExtractor(4, 3, 2)), DimensionError);
}

TEST_CASE("layer_weight by mode") {
  std::mt19937_64 rng(12);
  const Vector zero(2, 0.0);
  const Vector s = oracle::random_vector(2, rng);
  FusionLayerParams full(FusionMode::dynamic_full, 3, 4, 2, 0);
  oracle::fill(full.static_weight.data, rng);
  oracle::fill(full.generator.data, rng);
  CHECK(layer_weight(full, zero).data == full.static_weight.data);

  FusionLayerParams stat(FusionMode::static_weights, 3, 4, 2, 0);
  oracle::fill(stat.static_weight.data, rng);
  CHECK(layer_weight(stat, s).data == stat.static_weight.data);

  FusionLayerParams cp(FusionMode::dynamic_cp, 3, 4, 2, 3);
  cp.static_weight = full.static_weight;
  oracle::fill(cp.cp_generator.a.data, rng);
  oracle::fill(cp.cp_generator.b.data, rng);
  oracle::fill(cp.cp_generator.c.data, rng);
  FusionLayerParams as_full(FusionMode::dynamic_full, 3, 4, 2, 0);
  as_full.static_weight = cp.static_weight;
  as_full.generator = materialize(cp.cp_generator);
  CHECK(oracle::max_abs_diff(layer_weight(cp, s).data, layer_weight(as_full, s).data) <= 1e-10);

  FusionLayerParams nostatic(FusionMode::dynamic_no_static, 3, 4, 2, 0);
  nostatic.generator = full.generator;
  CHECK(oracle::max_abs_diff(layer_weight(nostatic, s).data, mode3_contract(full.generator, s).data) == 0.0);
  CHECK(nostatic.static_weight.empty());
  CHECK(stat.generator.empty());
}

TEST_CASE("fuse with an identity-padded static projection returns the leading features") {
  FusionConfig cfg;
  cfg.mode = FusionMode::static_weights;
  cfg.input_dim = 5;
  cfg.output_dim = 3;
  FusionStack s(cfg);
  for (std::size_t k = 0; k < 3; ++k) s.layers[0].static_weight(k, k) = 1.0;
  CHECK(fuse(Vector{4, -1, 2, 7, 8}, s) == Vector{4, -1, 2});
}

TEST_CASE("fuse of an all-zero stack is zero") {
  for (FusionMode m : kModes) {
    FusionConfig cfg;
    cfg.mode = m;
    cfg.input_dim = 6;
    cfg.output_dim = 2;
    cfg.layers = 2;
    cfg.meta_dim = 2;
    cfg.meta_hidden = 3;
    cfg.rank = 2;
    const FusionStack s(cfg);
    CHECK(fuse(Vector{1, 2, 3, 4, 5, 6}, s) == Vector{0, 0});
  }
}

TEST_CASE("fuse matches the straight-line oracle in every mode") {
  std::mt19937_64 rng(13);
  for (FusionMode m : kModes) {
    CAPTURE(to_string(m));
    const FusionStack s = random_stack(m, 8, 3, 2, rng);
    for (int k = 0; k < 5; ++k) {
      const Vector x = oracle::random_vector(8, rng);
      CHECK(oracle::max_abs_diff(fuse(x, s), oracle::fuse(s, x)) <= 1e-12);
    }
  }
}

TEST_CASE("zero meta vector reduces dynamic-full to static") {
  std::mt19937_64 rng(14);
  FusionStack dyn = random_stack(FusionMode::dynamic_full, 8, 3, 2, rng);
  std::fill(dyn.extractor.w_out.data.begin(), dyn.extractor.w_out.data.end(), 0.0);
  std::fill(dyn.extractor.b_out.begin(), dyn.extractor.b_out.end(), -1.0);
  FusionConfig cfg = dyn.config;
  cfg.mode = FusionMode::static_weights;
  FusionStack stat(cfg);
  for (std::size_t n = 0; n < stat.layers.size(); ++n) stat.layers[n].static_weight = dyn.layers[n].static_weight;
  for (int k = 0; k < 20; ++k) {
    const Vector x = oracle::random_vector(8, rng);
    CHECK(fuse(x, dyn) == fuse(x, stat));
  }
}

TEST_CASE("items with different meta vectors get different first-layer weights") {
  std::mt19937_64 rng(15);
  const FusionStack s = random_stack(FusionMode::dynamic_full, 6, 2, 1, rng);
  const Vector x1 = oracle::random_vector(6, rng), x2 = oracle::random_vector(6, rng);
  const Vector s1 = extract_meta(x1, s.extractor), s2 = extract_meta(x2, s.extractor);
  REQUIRE(s1 != s2);
  CHECK(oracle::max_abs_diff(layer_weight(s.layers[0], s1).data, layer_weight(s.layers[0], s2).data) > 0.0);
}

TEST_CASE("dynamic-cp reproduces dynamic-full when factors materialize to the full tensor") {
  std::mt19937_64 rng(16);
  const FusionStack cp = random_stack(FusionMode::dynamic_cp, 8, 3, 2, rng, 2, 3);
  FusionConfig cfg = cp.config;
  cfg.mode = FusionMode::dynamic_full;
  FusionStack full(cfg);
  full.extractor = cp.extractor;
  for (std::size_t n = 0; n < full.layers.size(); ++n) {
    full.layers[n].static_weight = cp.layers[n].static_weight;
    full.layers[n].generator = materialize(cp.layers[n].cp_generator);
  }
  for (int k = 0; k < 10; ++k) {
    const Vector x = oracle::random_vector(8, rng);
    CHECK(oracle::max_abs_diff(fuse(x, cp), fuse(x, full)) <= 1e-8);
  }
}

TEST_CASE("parameter naming and counts by mode") {
  std::mt19937_64 rng(17);
  auto names = [](const FusionStack& s) {
    std::vector<std::string> n;
    for (const auto& p : s.params()) n.push_back(p.name);
    return n;
  };
  const FusionStack stat = random_stack(FusionMode::static_weights, 8, 3, 2, rng);
  CHECK(names(stat) == std::vector<std::string>{"layer1.static", "layer2.static"});
  CHECK(stat.generator_parameter_count() == 0);
  const FusionStack cp = random_stack(FusionMode::dynamic_cp, 8, 3, 2, rng, 2, 3);
  // tower 8 -> 4 -> 3, d_s = 2, rank 3
  CHECK(cp.generator_parameter_count() == 3u * (4 + 8 + 2) + 3u * (3 + 4 + 2));
  const FusionStack full = random_stack(FusionMode::dynamic_full, 8, 3, 2, rng);
  CHECK(full.generator_parameter_count() == 4u * 8 * 2 + 3u * 4 * 2);
  const FusionStack nostatic = random_stack(FusionMode::dynamic_no_static, 8, 3, 2, rng);
  CHECK(nostatic.parameter_count() == full.parameter_count() - (4u * 8 + 3u * 4));
}

TEST_CASE("fuse_backward") {
  std::mt19937_64 rng(18);
  SUBCASE("zero upstream gradient") {
    const FusionStack s = random_stack(FusionMode::dynamic_full, 6, 3, 2, rng);
    FusionCache cache;
    fuse(oracle::random_vector(6, rng), s, &cache);
    FusionStack grad(s.config);
    fuse_backward(s, cache, Vector(3, 0.0), grad);
    CHECK(flatten(grad.params()) == Vector(grad.parameter_count(), 0.0));
  }
  SUBCASE("missing cache is a logic error") {
    const FusionStack s = random_stack(FusionMode::dynamic_full, 6, 3, 1, rng);
    FusionStack grad(s.config);
    CHECK_THROWS_AS(fuse_backward(s, FusionCache{}, Vector(3, 1.0), grad), std::logic_error);
  }
  SUBCASE("static mode gradient matches a plain linear layer") {
    const FusionStack s = random_stack(FusionMode::static_weights, 5, 2, 1, rng);
    const Vector x = oracle::random_vector(5, rng), g = oracle::random_vector(2, rng);
    FusionCache cache;
    fuse(x, s, &cache);
    FusionStack grad(s.config);
    fuse_backward(s, cache, g, grad);
    CHECK(grad.extractor.empty());
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 5; ++j) CHECK(grad.layers[0].static_weight(i, j) == doctest::Approx(g[i] * x[j]));
  }
  SUBCASE("dynamic modes reach every parameter block and pass finite differences") {
    for (FusionMode m : kModes) {
      CAPTURE(to_string(m));
      FusionStack s = random_stack(m, 6, 3, 2, rng);
      const Vector x = oracle::random_vector(6, rng), g = oracle::random_vector(3, rng);
      FusionCache cache;
      fuse(x, s, &cache);
      FusionStack grad(s.config);
      fuse_backward(s, cache, g, grad);
      double norm = 0.0;
      for (const auto& p : grad.params())
        for (double v : p.values) norm += v * v;
      CHECK(norm > 0.0);
      const Vector x0 = flatten(s.params());
      auto f = [&](std::span<const double> v) {
        assign(s.params(), v);
        return dot(g, fuse(x, s));
      };
      CHECK(finite_diff_check(f, x0, flatten(grad.params())) <= 1e-5);
    }
  }
}

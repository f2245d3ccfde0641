#include "metammf/fusion.hpp"

#include <algorithm>
#include <stdexcept>

namespace metammf {

namespace {

void relu_inplace(Vector& v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

Vector affine(const Matrix& w, const Vector& b, std::span<const double> x) {
  Vector y = matvec(w, x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

// g <- g * relu'(pre)
void relu_backward(Vector& g, const Vector& pre) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(pre[i] > 0.0)) g[i] = 0.0;
  }
}

void add_into(Vector& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::size_t largest_power_of_two_at_most(std::size_t n) {
  if (n == 0) return 0;
  std::size_t p = 1;
  while (p <= n / 2) p *= 2;
  return p;
}

template <class Stack, class View>
std::vector<View> collect_params(Stack& stack) {
  std::vector<View> out;
  auto matrix = [&out](std::string name, auto& m) {
    out.push_back({std::move(name), {m.rows, m.cols}, std::span(m.data)});
  };
  auto vector = [&out](std::string name, auto& v) { out.push_back({std::move(name), {v.size()}, std::span(v)}); };
  if (!stack.extractor.empty()) {
    matrix("extractor.w_in", stack.extractor.w_in);
    vector("extractor.b_in", stack.extractor.b_in);
    matrix("extractor.w_mid", stack.extractor.w_mid);
    vector("extractor.b_mid", stack.extractor.b_mid);
    matrix("extractor.w_out", stack.extractor.w_out);
    vector("extractor.b_out", stack.extractor.b_out);
  }
  for (std::size_t n = 0; n < stack.layers.size(); ++n) {
    auto& layer = stack.layers[n];
    const std::string prefix = "layer" + std::to_string(n + 1) + ".";
    if (!layer.static_weight.empty()) matrix(prefix + "static", layer.static_weight);
    if (!layer.generator.empty()) {
      auto& t = layer.generator;
      out.push_back({prefix + "generator", {t.p, t.q, t.z}, std::span(t.data)});
    }
    if (!layer.cp_generator.empty()) {
      matrix(prefix + "cp_a", layer.cp_generator.a);
      matrix(prefix + "cp_b", layer.cp_generator.b);
      matrix(prefix + "cp_c", layer.cp_generator.c);
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::static_weights: return "static";
    case FusionMode::dynamic_full: return "dynamic-full";
    case FusionMode::dynamic_cp: return "dynamic-cp";
    case FusionMode::dynamic_no_static: return "dynamic-no-static";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "static") return FusionMode::static_weights;
  if (text == "dynamic-full") return FusionMode::dynamic_full;
  if (text == "dynamic-cp") return FusionMode::dynamic_cp;
  if (text == "dynamic-no-static") return FusionMode::dynamic_no_static;
  throw ConfigError("unknown fusion mode '" + std::string(text) +
                    "' (expected static, dynamic-full, dynamic-cp or dynamic-no-static)");
}

std::size_t ItemModalities::dim() const {
  std::size_t d = 0;
  for (const auto* m : {&visual, &acoustic, &textual}) {
    if (*m) d += (*m)->size();
  }
  return d;
}

Vector ItemModalities::concat() const {
  if (!visual && !acoustic && !textual) throw DimensionError("item has no modality features");
  Vector out;
  out.reserve(dim());
  for (const auto* m : {&visual, &acoustic, &textual}) {
    if (*m) out.insert(out.end(), (*m)->begin(), (*m)->end());
  }
  require_finite(out, "item features");
  return out;
}

void TowerShape::validate() const {
  if (widths.size() < 2) throw DimensionError("tower needs at least one layer");
  const std::size_t out = widths.back();
  for (std::size_t k = 0; k < widths.size(); ++k) {
    if (widths[k] < out) throw DimensionError("tower width " + std::to_string(widths[k]) + " below output dim");
    if (k >= 2 && widths[k] > widths[k - 1]) throw DimensionError("tower widths increase after first hidden layer");
  }
}

TowerShape build_tower(std::size_t input_dim, std::size_t output_dim, std::size_t layers) {
  if (layers < 1) throw std::invalid_argument("build_tower: need at least one layer");
  if (output_dim == 0 || output_dim > input_dim) {
    throw std::invalid_argument("build_tower: output dim " + std::to_string(output_dim) + " exceeds input dim " +
                                std::to_string(input_dim));
  }
  TowerShape tower;
  tower.widths.push_back(input_dim);
  std::size_t width = std::max(largest_power_of_two_at_most(input_dim / 2), output_dim);
  for (std::size_t n = 1; n < layers; ++n) {
    tower.widths.push_back(width);
    width = std::max(width / 2, output_dim);
  }
  tower.widths.push_back(output_dim);
  return tower;
}

MetaExtractor::MetaExtractor(std::size_t input_dim, std::size_t hidden, std::size_t meta_dim)
    : w_in(hidden, input_dim),
      b_in(hidden, 0.0),
      w_mid(hidden, hidden),
      b_mid(hidden, 0.0),
      w_out(meta_dim, hidden),
      b_out(meta_dim, 0.0) {}

Vector extract_meta(std::span<const double> x, const MetaExtractor& ext) {
  if (x.size() != ext.input_dim()) {
    throw DimensionError("extract_meta: input length " + std::to_string(x.size()) + " vs extractor input " +
                         std::to_string(ext.input_dim()));
  }
  require_finite(x, "extract_meta input");
  Vector h = affine(ext.w_in, ext.b_in, x);
  relu_inplace(h);
  h = affine(ext.w_mid, ext.b_mid, h);
  relu_inplace(h);
  Vector s = affine(ext.w_out, ext.b_out, h);
  relu_inplace(s);
  return s;
}

FusionLayerParams::FusionLayerParams(FusionMode m, std::size_t out, std::size_t in, std::size_t meta_dim,
                                     std::size_t rank)
    : mode(m) {
  if (has_static_weight(m)) static_weight = Matrix(out, in);
  if (has_generator(m)) {
    if (uses_cp(m)) {
      if (rank == 0) throw std::invalid_argument("CP rank must be at least 1");
      cp_generator = CpTensor(out, in, meta_dim, rank);
    } else {
      generator = FusionTensor(out, in, meta_dim);
    }
  }
}

std::size_t FusionLayerParams::out_dim() const {
  if (!static_weight.empty()) return static_weight.rows;
  return uses_cp(mode) ? cp_generator.p() : generator.p;
}

std::size_t FusionLayerParams::in_dim() const {
  if (!static_weight.empty()) return static_weight.cols;
  return uses_cp(mode) ? cp_generator.q() : generator.q;
}

Matrix layer_weight(const FusionLayerParams& params, std::span<const double> s) {
  switch (params.mode) {
    case FusionMode::static_weights:
      return params.static_weight;
    case FusionMode::dynamic_no_static:
      return mode3_contract(params.generator, s);
    case FusionMode::dynamic_full:
    case FusionMode::dynamic_cp: {
      Matrix dyn = params.mode == FusionMode::dynamic_cp ? cp_contract(params.cp_generator, s)
                                                         : mode3_contract(params.generator, s);
      if (dyn.rows != params.static_weight.rows || dyn.cols != params.static_weight.cols) {
        throw DimensionError("layer_weight: static " + params.static_weight.shape() + " vs dynamic " + dyn.shape());
      }
      for (std::size_t e = 0; e < dyn.data.size(); ++e) dyn.data[e] += params.static_weight.data[e];
      return dyn;
    }
  }
  return {};
}

FusionStack::FusionStack(const FusionConfig& cfg) : config(cfg), tower(build_tower(cfg.input_dim, cfg.output_dim, cfg.layers)) {
  tower.validate();
  if (has_generator(cfg.mode)) {
    if (cfg.meta_dim == 0 || cfg.meta_hidden == 0) throw std::invalid_argument("meta dims must be positive");
    extractor = MetaExtractor(cfg.input_dim, cfg.meta_hidden, cfg.meta_dim);
  }
  for (std::size_t n = 0; n < tower.layers(); ++n) {
    layers.emplace_back(cfg.mode, tower.widths[n + 1], tower.widths[n], cfg.meta_dim, cfg.rank);
  }
}

std::vector<ParamView> FusionStack::params() { return collect_params<FusionStack, ParamView>(*this); }

std::vector<ConstParamView> FusionStack::params() const {
  return collect_params<const FusionStack, ConstParamView>(*this);
}

std::size_t FusionStack::parameter_count() const { return total_size(params()); }

std::size_t FusionStack::generator_parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.generator.data.size() + (layer.cp_generator.empty() ? 0 : layer.cp_generator.parameter_count());
  return n;
}

Vector fuse(std::span<const double> x, const FusionStack& stack, FusionCache* cache) {
  if (x.size() != stack.tower.input_dim()) {
    throw DimensionError("fuse: input length " + std::to_string(x.size()) + " vs tower input " +
                         std::to_string(stack.tower.input_dim()));
  }
  const FusionMode mode = stack.config.mode;
  const double slope = stack.config.leaky_slope;

  Vector meta;
  if (has_generator(mode)) {
    require_finite(x, "fuse input");
    Vector h1_pre = affine(stack.extractor.w_in, stack.extractor.b_in, x);
    Vector h1 = h1_pre;
    relu_inplace(h1);
    Vector h2_pre = affine(stack.extractor.w_mid, stack.extractor.b_mid, h1);
    Vector h2 = h2_pre;
    relu_inplace(h2);
    Vector s_pre = affine(stack.extractor.w_out, stack.extractor.b_out, h2);
    meta = s_pre;
    relu_inplace(meta);
    if (cache) {
      cache->hidden1_pre = std::move(h1_pre);
      cache->hidden1 = std::move(h1);
      cache->hidden2_pre = std::move(h2_pre);
      cache->hidden2 = std::move(h2);
      cache->meta_pre = std::move(s_pre);
      cache->meta = meta;
    }
  }
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->layer_inputs.clear();
    cache->layer_pre.clear();
  }

  Vector h(x.begin(), x.end());
  for (std::size_t n = 0; n < stack.layers.size(); ++n) {
    const auto& layer = stack.layers[n];
    Vector y;
    if (has_static_weight(mode)) y = matvec(layer.static_weight, h);
    if (has_generator(mode)) {
      const Vector dyn = uses_cp(mode) ? cp_apply(layer.cp_generator, meta, h) : mode3_apply(layer.generator, meta, h);
      if (y.empty()) {
        y = dyn;
      } else {
        add_into(y, dyn);
      }
    }
    if (cache) {
      cache->layer_inputs.push_back(h);
      cache->layer_pre.push_back(y);
    }
    if (n + 1 < stack.layers.size()) {
      for (double& v : y) v = v > 0.0 ? v : slope * v;
    }
    h = std::move(y);
  }
  if (cache) cache->filled = true;
  return h;
}

Vector fuse(const ItemModalities& item, const FusionStack& stack, FusionCache* cache) {
  return fuse(item.concat(), stack, cache);
}

void fuse_backward(const FusionStack& stack, const FusionCache& cache, std::span<const double> g, FusionStack& grad) {
  if (!cache.filled || cache.layer_pre.size() != stack.layers.size()) {
    throw std::logic_error("fuse_backward: forward cache missing; call fuse() with a cache first");
  }
  if (g.size() != stack.tower.output_dim()) {
    throw DimensionError("fuse_backward: gradient length " + std::to_string(g.size()) + " vs output dim " +
                         std::to_string(stack.tower.output_dim()));
  }
  if (grad.layers.size() != stack.layers.size()) throw DimensionError("fuse_backward: gradient stack shape differs");

  const FusionMode mode = stack.config.mode;
  const double slope = stack.config.leaky_slope;
  const bool dynamic = has_generator(mode);
  Vector grad_meta(dynamic ? stack.config.meta_dim : 0, 0.0);

  Vector gy(g.begin(), g.end());
  for (std::size_t n = stack.layers.size(); n-- > 0;) {
    const auto& layer = stack.layers[n];
    auto& glayer = grad.layers[n];
    const Vector& input = cache.layer_inputs[n];
    if (n + 1 < stack.layers.size()) {
      const Vector& pre = cache.layer_pre[n];
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (!(pre[i] > 0.0)) gy[i] *= slope;
      }
    }
    Vector gx(input.size(), 0.0);
    if (has_static_weight(mode)) {
      add_outer(glayer.static_weight, gy, input);
      gx = matvec_transposed(layer.static_weight, gy);
    }
    if (dynamic) {
      if (uses_cp(mode)) {
        cp_apply_backward(layer.cp_generator, cache.meta, input, gy, glayer.cp_generator, grad_meta, gx);
      } else {
        mode3_apply_backward(layer.generator, cache.meta, input, gy, glayer.generator, grad_meta, gx);
      }
    }
    gy = std::move(gx);
  }

  if (!dynamic) return;
  const MetaExtractor& ext = stack.extractor;
  MetaExtractor& gext = grad.extractor;
  relu_backward(grad_meta, cache.meta_pre);
  add_outer(gext.w_out, grad_meta, cache.hidden2);
  add_into(gext.b_out, grad_meta);
  Vector g2 = matvec_transposed(ext.w_out, grad_meta);
  relu_backward(g2, cache.hidden2_pre);
  add_outer(gext.w_mid, g2, cache.hidden1);
  add_into(gext.b_mid, g2);
  Vector g1 = matvec_transposed(ext.w_mid, g2);
  relu_backward(g1, cache.hidden1_pre);
  add_outer(gext.w_in, g1, cache.input);
  add_into(gext.b_in, g1);
}

}  // namespace metammf

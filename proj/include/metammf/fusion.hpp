#pragma once

// Item-specific multimodal fusion.
//
// A meta extractor (three affine + ReLU layers) compresses an item's
// concatenated modality features into a short meta vector s. Every fusion
// layer n then uses the weight
//
//     W_i^n = W^n + T^n x3 s
//
// where T^n is either a full p x q x d_s tensor or its CP factors. The layers
// form a bias-free tower with LeakyReLU between layers and a linear output.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metammf/linalg.hpp"
#include "metammf/params.hpp"

namespace metammf {

enum class FusionMode {
  static_weights,     // shared W^n only, no generator, no extractor
  dynamic_full,       // W^n + full tensor generator
  dynamic_cp,         // W^n + CP-factored generator
  dynamic_no_static,  // full tensor generator only
};

std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view text);

constexpr bool has_static_weight(FusionMode m) { return m != FusionMode::dynamic_no_static; }
constexpr bool has_generator(FusionMode m) { return m != FusionMode::static_weights; }
constexpr bool uses_cp(FusionMode m) { return m == FusionMode::dynamic_cp; }

// Visual, acoustic and textual features of one item. Absent modalities are
// dropped from the concatenation.
struct ItemModalities {
  std::optional<Vector> visual;
  std::optional<Vector> acoustic;
  std::optional<Vector> textual;

  std::size_t dim() const;
  // Concatenation in visual, acoustic, textual order. Throws if no modality
  // is present or a value is not finite.
  Vector concat() const;
};

struct TowerShape {
  std::vector<std::size_t> widths;  // input dim first, output dim last

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  void validate() const;
};

// N = 1 gives [D, d_m]. Otherwise the first hidden width is the largest power
// of two not above D/2, each later hidden width halves the previous one, and
// no width drops below d_m.
TowerShape build_tower(std::size_t input_dim, std::size_t output_dim, std::size_t layers);

struct FusionConfig {
  FusionMode mode = FusionMode::dynamic_full;
  std::size_t input_dim = 0;
  std::size_t output_dim = 32;
  std::size_t layers = 1;
  std::size_t meta_dim = 5;
  std::size_t meta_hidden = 64;
  std::size_t rank = 8;  // used by dynamic_cp only
  double leaky_slope = 0.01;
};

struct MetaExtractor {
  Matrix w_in;  // hidden x D
  Vector b_in;
  Matrix w_mid;  // hidden x hidden
  Vector b_mid;
  Matrix w_out;  // d_s x hidden
  Vector b_out;

  MetaExtractor() = default;
  MetaExtractor(std::size_t input_dim, std::size_t hidden, std::size_t meta_dim);

  std::size_t input_dim() const { return w_in.cols; }
  std::size_t meta_dim() const { return w_out.rows; }
  bool empty() const { return w_in.empty(); }
};

Vector extract_meta(std::span<const double> x, const MetaExtractor& ext);

struct FusionLayerParams {
  FusionMode mode = FusionMode::static_weights;
  Matrix static_weight;    // out x in, absent in dynamic_no_static
  FusionTensor generator;  // out x in x d_s, dynamic_full / dynamic_no_static
  CpTensor cp_generator;   // dynamic_cp

  FusionLayerParams() = default;
  FusionLayerParams(FusionMode m, std::size_t out, std::size_t in, std::size_t meta_dim, std::size_t rank);

  std::size_t out_dim() const;
  std::size_t in_dim() const;
};

// The item-specific weight W_i^n for meta vector s.
Matrix layer_weight(const FusionLayerParams& params, std::span<const double> s);

struct FusionStack {
  FusionConfig config;
  TowerShape tower;
  MetaExtractor extractor;  // empty in static mode
  std::vector<FusionLayerParams> layers;

  FusionStack() = default;
  // All parameters zero.
  explicit FusionStack(const FusionConfig& cfg);

  std::vector<ParamView> params();
  std::vector<ConstParamView> params() const;
  std::size_t parameter_count() const;
  std::size_t generator_parameter_count() const;
};

// Activations saved by fuse() for fuse_backward().
struct FusionCache {
  Vector input;
  Vector hidden1_pre, hidden1;
  Vector hidden2_pre, hidden2;
  Vector meta_pre, meta;
  std::vector<Vector> layer_inputs;  // input to layer n
  std::vector<Vector> layer_pre;     // pre-activation output of layer n
  bool filled = false;
};

Vector fuse(std::span<const double> x, const FusionStack& stack, FusionCache* cache = nullptr);
Vector fuse(const ItemModalities& item, const FusionStack& stack, FusionCache* cache = nullptr);

// Accumulates d(g . e_m)/d(params) into `grad`, which must have the shape of
// `stack`. Throws std::logic_error if the cache was not filled by fuse().
void fuse_backward(const FusionStack& stack, const FusionCache& cache, std::span<const double> g,
                   FusionStack& grad);

}  // namespace metammf

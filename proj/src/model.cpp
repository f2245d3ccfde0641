#include "metammf/model.hpp"

#include <cmath>
#include <stdexcept>

#include "metammf/parallel.hpp"

namespace metammf {

Model::Model(const ModelConfig& cfg)
    : config(cfg),
      fusion(cfg.fusion),
      table(cfg.num_users, cfg.num_items, cfg.fusion.output_dim, cfg.collab_dim) {
  if (cfg.head == HeadKind::gcn) {
    if (cfg.gcn_layers == 0) throw std::invalid_argument("GCN head needs at least one propagation layer");
    gcn = GcnParams(cfg.gcn_layers, cfg.fusion.output_dim + cfg.collab_dim, cfg.gcn_per_type);
  }
}

namespace {

template <class M, class View>
std::vector<View> collect_model(M& model) {
  std::vector<View> out;
  for (auto& v : model.fusion.params()) out.push_back({"fusion." + v.name, v.dims, v.values});
  out.push_back({"embeddings.users", {model.table.users.rows, model.table.users.cols}, std::span(model.table.users.data)});
  out.push_back({"embeddings.items", {model.table.items.rows, model.table.items.cols}, std::span(model.table.items.data)});
  for (auto& v : model.gcn.params()) out.push_back({"gcn." + v.name, v.dims, v.values});
  return out;
}

}  // namespace

std::vector<ParamView> Model::params() { return collect_model<Model, ParamView>(*this); }
std::vector<ConstParamView> Model::params() const { return collect_model<const Model, ConstParamView>(*this); }
std::size_t Model::parameter_count() const { return total_size(params()); }

double xavier_bound(std::span<const std::size_t> dims) {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  if (dims.size() == 1) {
    fan_in = fan_out = dims[0];
  } else if (dims.size() == 2) {
    fan_out = dims[0];
    fan_in = dims[1];
  } else if (dims.size() == 3) {
    fan_out = dims[0];
    fan_in = dims[1] * dims[2];
  } else {
    throw std::invalid_argument("xavier_init: unsupported rank " + std::to_string(dims.size()));
  }
  if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("xavier_init: dimensions must be positive");
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Vector xavier_init(std::span<const std::size_t> dims, Rng& rng) {
  const double bound = xavier_bound(dims);
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  std::uniform_real_distribution<double> dist(-bound, bound);
  Vector out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

void initialize(Model& model, Rng& rng) {
  for (auto& view : model.params()) {
    if (view.dims.size() == 1) {
      std::fill(view.values.begin(), view.values.end(), 0.0);
      continue;
    }
    const Vector values = xavier_init(view.dims, rng);
    std::copy(values.begin(), values.end(), view.values.begin());
  }
}

Matrix fuse_all(const FusionStack& stack, const Matrix& features, int threads) {
  Matrix out(features.rows, stack.tower.output_dim());
  parallel_chunks(features.rows, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t i = begin; i < end; ++i) {
      const Vector e = fuse(features.row(i), stack);
      std::copy(e.begin(), e.end(), out.row(i).begin());
    }
  });
  return out;
}

Representations compute_representations(const Model& model, const Matrix& features, const InteractionGraph& graph,
                                        int threads) {
  if (features.rows != model.config.num_items) {
    throw DimensionError("feature table has " + std::to_string(features.rows) + " rows but the model has " +
                         std::to_string(model.config.num_items) + " items");
  }
  const Matrix fused = fuse_all(model.fusion, features, threads);
  NodeReps reps = gcn_init(fused, model.table);
  if (model.config.head == HeadKind::gcn) {
    for (const auto& layer : model.gcn.layers) {
      reps = gcn_propagate(graph, reps, layer, model.config.fusion.leaky_slope);
    }
  }
  return {std::move(reps.users), std::move(reps.items)};
}

double score(const Representations& reps, std::size_t user, std::size_t item) {
  if (user >= reps.users.rows) throw std::out_of_range("unknown user " + std::to_string(user));
  if (item >= reps.items.rows) throw std::out_of_range("unknown item " + std::to_string(item));
  return dot(reps.users.row(user), reps.items.row(item));
}

}  // namespace metammf

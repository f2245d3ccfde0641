#include "metammf/gradcheck.hpp"

#include <functional>

#include "metammf/heads.hpp"
#include "metammf/linalg.hpp"
#include "metammf/random.hpp"

namespace metammf {

Vector flatten(const std::vector<ConstParamView>& params) {
  Vector out;
  out.reserve(total_size(params));
  for (const auto& p : params) out.insert(out.end(), p.values.begin(), p.values.end());
  return out;
}

Vector flatten(const std::vector<ParamView>& params) { return flatten(metammf::as_const(params)); }

void assign(const std::vector<ParamView>& params, std::span<const double> values) {
  std::size_t offset = 0;
  for (const auto& p : params) {
    if (offset + p.values.size() > values.size()) throw DimensionError("assign: too few values");
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
              values.begin() + static_cast<std::ptrdiff_t>(offset + p.values.size()), p.values.begin());
    offset += p.values.size();
  }
  if (offset != values.size()) throw DimensionError("assign: too many values");
}

namespace {

void fill_uniform(std::span<double> values, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : values) v = dist(rng);
}

Vector random_vector(std::size_t n, Rng& rng) {
  Vector v(n);
  fill_uniform(v, rng);
  return v;
}

// Packs several arrays into one flat vector and unpacks them again.
struct Packing {
  std::vector<std::span<double>> parts;

  Vector pack() const {
    Vector out;
    for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  }
  void unpack(std::span<const double> flat) const {
    std::size_t off = 0;
    for (auto p : parts) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.begin() + static_cast<std::ptrdiff_t>(off + p.size()),
                p.begin());
      off += p.size();
    }
  }
};

GradGroupResult finish(std::string group, const ScalarFunction& f, const Vector& x0, Vector analytic, bool negate,
                       double rtol) {
  if (negate) {
    for (double& v : analytic) v = -v;
  }
  GradGroupResult r;
  r.group = std::move(group);
  r.parameters = x0.size();
  r.max_rel_error = finite_diff_check(f, x0, analytic);
  r.pass = r.max_rel_error <= rtol;
  return r;
}

double weighted_sum(const Matrix& g, const Matrix& m) { return dot(g.data, m.data); }

GradGroupResult check_mode3_contract(Rng& rng, bool negate, double rtol) {
  FusionTensor t(3, 4, 3);
  fill_uniform(t.data, rng);
  Vector s = random_vector(3, rng);
  Matrix g(3, 4);
  fill_uniform(g.data, rng);
  const Packing pk{{std::span(t.data), std::span(s)}};
  const Vector x0 = pk.pack();
  const Mode3Gradient grad = mode3_contract_backward(t, s, g);
  Vector analytic = grad.tensor.data;
  analytic.insert(analytic.end(), grad.meta.begin(), grad.meta.end());
  auto f = [&](std::span<const double> x) {
    pk.unpack(x);
    return weighted_sum(g, mode3_contract(t, s));
  };
  auto r = finish("linalg.mode3_contract", f, x0, analytic, negate, rtol);
  pk.unpack(x0);
  return r;
}

GradGroupResult check_cp_contract(Rng& rng, bool negate, double rtol) {
  CpTensor t(4, 5, 3, 3);
  fill_uniform(t.a.data, rng);
  fill_uniform(t.b.data, rng);
  fill_uniform(t.c.data, rng);
  Vector s = random_vector(3, rng);
  Matrix g(4, 5);
  fill_uniform(g.data, rng);
  const Packing pk{{std::span(t.a.data), std::span(t.b.data), std::span(t.c.data), std::span(s)}};
  const Vector x0 = pk.pack();
  const CpGradient grad = cp_contract_backward(t, s, g);
  Vector analytic;
  for (const auto* part : {&grad.a.data, &grad.b.data, &grad.c.data, &grad.meta}) {
    analytic.insert(analytic.end(), part->begin(), part->end());
  }
  auto f = [&](std::span<const double> x) {
    pk.unpack(x);
    return weighted_sum(g, cp_contract(t, s));
  };
  return finish("linalg.cp_contract", f, x0, analytic, negate, rtol);
}

GradGroupResult check_mode3_apply(Rng& rng, bool negate, double rtol) {
  FusionTensor t(4, 6, 3);
  fill_uniform(t.data, rng);
  Vector s = random_vector(3, rng);
  Vector x = random_vector(6, rng);
  const Vector gy = random_vector(4, rng);
  const Packing pk{{std::span(t.data), std::span(s), std::span(x)}};
  const Vector x0 = pk.pack();
  FusionTensor gt(4, 6, 3);
  Vector gs(3, 0.0), gx(6, 0.0);
  mode3_apply_backward(t, s, x, gy, gt, gs, gx);
  Vector analytic = gt.data;
  analytic.insert(analytic.end(), gs.begin(), gs.end());
  analytic.insert(analytic.end(), gx.begin(), gx.end());
  auto f = [&](std::span<const double> v) {
    pk.unpack(v);
    return dot(gy, mode3_apply(t, s, x));
  };
  return finish("linalg.mode3_apply", f, x0, analytic, negate, rtol);
}

GradGroupResult check_cp_apply(Rng& rng, bool negate, double rtol) {
  CpTensor t(4, 6, 3, 2);
  fill_uniform(t.a.data, rng);
  fill_uniform(t.b.data, rng);
  fill_uniform(t.c.data, rng);
  Vector s = random_vector(3, rng);
  Vector x = random_vector(6, rng);
  const Vector gy = random_vector(4, rng);
  const Packing pk{{std::span(t.a.data), std::span(t.b.data), std::span(t.c.data), std::span(s), std::span(x)}};
  const Vector x0 = pk.pack();
  CpTensor gt(4, 6, 3, 2);
  Vector gs(3, 0.0), gx(6, 0.0);
  cp_apply_backward(t, s, x, gy, gt, gs, gx);
  Vector analytic;
  for (const auto* part : {&gt.a.data, &gt.b.data, &gt.c.data, &gs, &gx}) analytic.insert(analytic.end(), part->begin(), part->end());
  auto f = [&](std::span<const double> v) {
    pk.unpack(v);
    return dot(gy, cp_apply(t, s, x));
  };
  return finish("linalg.cp_apply", f, x0, analytic, negate, rtol);
}

GradGroupResult check_fusion(FusionMode mode, Rng& rng, bool negate, double rtol) {
  FusionConfig cfg;
  cfg.mode = mode;
  cfg.input_dim = 6;
  cfg.output_dim = 3;
  cfg.layers = 2;
  cfg.meta_dim = 2;
  cfg.meta_hidden = 4;
  cfg.rank = 2;
  FusionStack stack(cfg);
  for (auto& p : stack.params()) fill_uniform(p.values, rng);
  // positive biases keep the extractor away from an all-dead ReLU
  if (!stack.extractor.empty()) {
    for (auto* b : {&stack.extractor.b_in, &stack.extractor.b_mid, &stack.extractor.b_out}) fill_uniform(*b, rng, 0.2, 1.0);
  }
  const Vector x = random_vector(6, rng);
  const Vector g = random_vector(3, rng);

  FusionCache cache;
  fuse(x, stack, &cache);
  FusionStack grad(cfg);
  fuse_backward(stack, cache, g, grad);
  const Vector x0 = flatten(stack.params());
  auto f = [&](std::span<const double> v) {
    assign(stack.params(), v);
    return dot(g, fuse(x, stack));
  };
  return finish("fusion." + std::string(to_string(mode)), f, x0, flatten(grad.params()), negate, rtol);
}

GradGroupResult check_gcn_propagate(Rng& rng, bool negate, double rtol) {
  const std::vector<Interaction> edges{{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 0}};  // item 3 isolated
  const InteractionGraph graph = InteractionGraph::from_pairs(3, 4, edges);
  const std::size_t d = 4;
  NodeReps prev{Matrix(3, d), Matrix(4, d)};
  fill_uniform(prev.users.data, rng);
  fill_uniform(prev.items.data, rng);
  GcnLayer layer{Matrix(d, d), Matrix(d, d), {}, {}};
  fill_uniform(layer.self_weight.data, rng);
  fill_uniform(layer.neighbor_weight.data, rng);
  NodeReps g_out{Matrix(3, d), Matrix(4, d)};
  fill_uniform(g_out.users.data, rng);
  fill_uniform(g_out.items.data, rng);
  const double slope = 0.01;

  NodeReps pre;
  gcn_propagate(graph, prev, layer, slope, &pre);
  GcnLayer g_layer{Matrix(d, d), Matrix(d, d), {}, {}};
  NodeReps g_prev{Matrix(3, d), Matrix(4, d)};
  gcn_propagate_backward(graph, prev, layer, pre, slope, g_out, g_layer, g_prev);

  const Packing pk{{std::span(prev.users.data), std::span(prev.items.data), std::span(layer.self_weight.data),
                    std::span(layer.neighbor_weight.data)}};
  const Vector x0 = pk.pack();
  Vector analytic;
  for (const auto* part : {&g_prev.users.data, &g_prev.items.data, &g_layer.self_weight.data, &g_layer.neighbor_weight.data}) {
    analytic.insert(analytic.end(), part->begin(), part->end());
  }
  auto f = [&](std::span<const double> v) {
    pk.unpack(v);
    const NodeReps out = gcn_propagate(graph, prev, layer, slope);
    return dot(g_out.users.data, out.users.data) + dot(g_out.items.data, out.items.data);
  };
  return finish("heads.gcn_propagate", f, x0, analytic, negate, rtol);
}

double objective_error(const Model& model, const Matrix& features, const InteractionGraph& graph,
                       std::span<const Triple> batch, double lambda, double step, bool negate) {
  Model work = model;
  Model grad(model.config);
  bpr_objective(work, features, graph, batch, lambda, &grad);
  Vector analytic = flatten(metammf::as_const(grad.params()));
  if (negate) {
    for (double& v : analytic) v = -v;
  }
  const Vector x0 = flatten(work.params());
  auto f = [&](std::span<const double> v) {
    assign(work.params(), v);
    return bpr_objective(work, features, graph, batch, lambda, nullptr);
  };
  return finite_diff_check(f, x0, analytic, step);
}

struct ToyProblem {
  Model model;
  Matrix features;
  InteractionGraph graph;
  std::vector<Triple> batch;
};

ToyProblem make_toy(HeadKind head, FusionMode mode, Rng& rng) {
  ModelConfig cfg;
  cfg.head = head;
  cfg.fusion.mode = mode;
  cfg.fusion.input_dim = 12;
  cfg.fusion.output_dim = 4;
  cfg.fusion.layers = 2;
  cfg.fusion.meta_dim = 3;
  cfg.fusion.meta_hidden = 4;
  cfg.fusion.rank = 2;
  cfg.collab_dim = 4;
  cfg.gcn_layers = 1;
  cfg.num_users = 3;
  cfg.num_items = head == HeadKind::mf ? 5 : 4;
  ToyProblem toy{Model(cfg), Matrix(cfg.num_items, 12), {}, {}};
  for (auto& p : toy.model.params()) fill_uniform(p.values, rng, -0.8, 0.8);
  if (!toy.model.fusion.extractor.empty()) {
    auto& ext = toy.model.fusion.extractor;
    for (auto* b : {&ext.b_in, &ext.b_mid, &ext.b_out}) fill_uniform(*b, rng, 0.2, 1.0);
  }
  fill_uniform(toy.features.data, rng);
  const std::vector<Interaction> edges{{0, 0}, {0, 1}, {1, 2}, {2, 0}, {2, 3}};
  toy.graph = InteractionGraph::from_pairs(cfg.num_users, cfg.num_items, edges);
  toy.batch = {{0, 0, 2}, {0, 1, 3}, {1, 2, 0}, {2, 3, 1}, {2, 0, 1}};
  return toy;
}

}  // namespace

double check_objective_gradient(const Model& model, const Matrix& features, const InteractionGraph& graph,
                                std::span<const Triple> batch, double lambda, double step) {
  return objective_error(model, features, graph, batch, lambda, step, false);
}

std::vector<GradGroupResult> run_gradient_suite(std::uint64_t seed, double rtol, std::string_view negate_group) {
  Rng rng = make_stream(seed, "gradcheck");
  std::vector<GradGroupResult> out;
  auto flip = [&](std::string_view group) { return group == negate_group; };

  out.push_back(check_mode3_contract(rng, flip("linalg.mode3_contract"), rtol));
  out.push_back(check_cp_contract(rng, flip("linalg.cp_contract"), rtol));
  out.push_back(check_mode3_apply(rng, flip("linalg.mode3_apply"), rtol));
  out.push_back(check_cp_apply(rng, flip("linalg.cp_apply"), rtol));
  for (FusionMode mode : {FusionMode::static_weights, FusionMode::dynamic_full, FusionMode::dynamic_cp,
                          FusionMode::dynamic_no_static}) {
    const std::string group = "fusion." + std::string(to_string(mode));
    out.push_back(check_fusion(mode, rng, flip(group), rtol));
  }
  out.push_back(check_gcn_propagate(rng, flip("heads.gcn_propagate"), rtol));

  const double lambda = 0.05;
  {
    ToyProblem toy = make_toy(HeadKind::mf, FusionMode::dynamic_full, rng);
    GradGroupResult r{"training.bpr-mf", 0.0, toy.model.parameter_count(), false};
    r.max_rel_error = objective_error(toy.model, toy.features, toy.graph, toy.batch, lambda, 1e-5, flip(r.group));
    r.pass = r.max_rel_error <= rtol;
    out.push_back(r);
  }
  {
    ToyProblem toy = make_toy(HeadKind::gcn, FusionMode::dynamic_cp, rng);
    GradGroupResult r{"training.bpr-gcn", 0.0, toy.model.parameter_count(), false};
    r.max_rel_error = objective_error(toy.model, toy.features, toy.graph, toy.batch, lambda, 1e-5, flip(r.group));
    r.pass = r.max_rel_error <= rtol;
    out.push_back(r);
  }
  return out;
}

}  // namespace metammf

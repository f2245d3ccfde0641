#include "metammf/heads.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace metammf {

namespace {

double leaky(double v, double slope) { return v > 0.0 ? v : slope * v; }

void require_index(std::size_t index, std::size_t count, const char* what) {
  if (index >= count) {
    throw std::out_of_range(std::string(what) + " index " + std::to_string(index) + " out of range (count " +
                            std::to_string(count) + ")");
  }
}

// Mean over rows `ids` of `reps`, zero when empty.
Vector neighbor_mean(const Matrix& reps, const std::vector<std::uint32_t>& ids) {
  Vector mean(reps.cols, 0.0);
  if (ids.empty()) return mean;
  for (std::uint32_t id : ids) {
    const auto row = reps.row(id);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& v : mean) v *= inv;
  return mean;
}

void propagate_side(const Matrix& self_reps, const Matrix& other_reps,
                    const std::vector<std::vector<std::uint32_t>>& neighbors, const Matrix& w_self,
                    const Matrix& w_neighbor, double slope, Matrix& out, Matrix* pre) {
  for (std::size_t node = 0; node < self_reps.rows; ++node) {
    Vector z = matvec(w_self, self_reps.row(node));
    const Vector m = neighbor_mean(other_reps, neighbors[node]);
    const Vector zn = matvec(w_neighbor, m);
    auto dst = out.row(node);
    for (std::size_t c = 0; c < z.size(); ++c) {
      z[c] += zn[c];
      if (pre) (*pre)(node, c) = z[c];
      dst[c] = leaky(z[c], slope);
    }
  }
}

void backward_side(const Matrix& self_reps, const Matrix& other_reps,
                   const std::vector<std::vector<std::uint32_t>>& neighbors, const Matrix& w_self,
                   const Matrix& w_neighbor, const Matrix& pre, double slope, const Matrix& grad_out,
                   Matrix& grad_w_self, Matrix& grad_w_neighbor, Matrix& grad_self, Matrix& grad_other) {
  Vector gz(grad_out.cols);
  for (std::size_t node = 0; node < self_reps.rows; ++node) {
    const auto g = grad_out.row(node);
    bool any = false;
    for (std::size_t c = 0; c < gz.size(); ++c) {
      gz[c] = pre(node, c) > 0.0 ? g[c] : slope * g[c];
      any = any || gz[c] != 0.0;
    }
    if (!any) continue;
    add_outer(grad_w_self, gz, self_reps.row(node));
    const Vector gs = matvec_transposed(w_self, gz);
    auto dst = grad_self.row(node);
    for (std::size_t c = 0; c < gs.size(); ++c) dst[c] += gs[c];

    const auto& ids = neighbors[node];
    if (ids.empty()) continue;
    const Vector m = neighbor_mean(other_reps, ids);
    add_outer(grad_w_neighbor, gz, m);
    Vector gm = matvec_transposed(w_neighbor, gz);
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (double& v : gm) v *= inv;
    for (std::uint32_t id : ids) {
      auto row = grad_other.row(id);
      for (std::size_t c = 0; c < gm.size(); ++c) row[c] += gm[c];
    }
  }
}

}  // namespace

std::string_view to_string(HeadKind head) { return head == HeadKind::mf ? "mf" : "gcn"; }

HeadKind parse_head(std::string_view text) {
  if (text == "mf") return HeadKind::mf;
  if (text == "gcn") return HeadKind::gcn;
  throw ConfigError("unknown head '" + std::string(text) + "' (expected mf or gcn)");
}

Vector item_representation(std::span<const double> fused, std::span<const double> collab) {
  Vector rep;
  rep.reserve(fused.size() + collab.size());
  rep.insert(rep.end(), fused.begin(), fused.end());
  rep.insert(rep.end(), collab.begin(), collab.end());
  return rep;
}

double mf_score(std::size_t user, std::span<const double> item_rep, const CollaborativeTable& table) {
  require_index(user, table.users.rows, "user");
  if (item_rep.size() != table.users.cols) {
    throw DimensionError("mf_score: item representation length " + std::to_string(item_rep.size()) +
                         " vs user embedding " + std::to_string(table.users.cols));
  }
  return dot(table.users.row(user), item_rep);
}

InteractionGraph InteractionGraph::from_pairs(std::size_t num_users, std::size_t num_items,
                                              std::span<const Interaction> pairs) {
  InteractionGraph g;
  g.num_users = num_users;
  g.num_items = num_items;
  g.user_items.resize(num_users);
  g.item_users.resize(num_items);
  for (const auto& [u, i] : pairs) {
    require_index(u, num_users, "user");
    require_index(i, num_items, "item");
    g.user_items[u].push_back(i);
    g.item_users[i].push_back(u);
  }
  for (auto* lists : {&g.user_items, &g.item_users}) {
    for (auto& l : *lists) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
  }
  return g;
}

void InteractionGraph::validate() const {
  if (user_items.size() != num_users || item_users.size() != num_items) {
    throw std::logic_error("interaction graph: adjacency sizes disagree with node counts");
  }
  std::size_t forward = 0;
  for (std::size_t u = 0; u < num_users; ++u) {
    for (std::uint32_t i : user_items[u]) {
      if (i >= num_items) throw std::logic_error("interaction graph: item index out of range");
      if (!std::binary_search(item_users[i].begin(), item_users[i].end(), static_cast<std::uint32_t>(u))) {
        throw std::logic_error("interaction graph: asymmetric edge (" + std::to_string(u) + ", " + std::to_string(i) + ")");
      }
      ++forward;
    }
  }
  std::size_t backward = 0;
  for (const auto& users : item_users) {
    for (std::uint32_t u : users) {
      if (u >= num_users) throw std::logic_error("interaction graph: user index out of range");
    }
    backward += users.size();
  }
  if (forward != backward) throw std::logic_error("interaction graph: edge counts differ between sides");
}

GcnParams::GcnParams(std::size_t num_layers, std::size_t dim, bool per_type) {
  for (std::size_t l = 0; l < num_layers; ++l) {
    GcnLayer layer{Matrix(dim, dim), Matrix(dim, dim), {}, {}};
    if (per_type) {
      layer.user_self_weight = Matrix(dim, dim);
      layer.user_neighbor_weight = Matrix(dim, dim);
    }
    layers.push_back(std::move(layer));
  }
}

namespace {

template <class Params, class View>
std::vector<View> collect_gcn(Params& p) {
  std::vector<View> out;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l + 1) + ".";
    auto add = [&](const char* name, auto& m) {
      out.push_back({prefix + name, {m.rows, m.cols}, std::span(m.data)});
    };
    add("self", layer.self_weight);
    add("neighbor", layer.neighbor_weight);
    if (layer.per_type()) {
      add("user_self", layer.user_self_weight);
      add("user_neighbor", layer.user_neighbor_weight);
    }
  }
  return out;
}

}  // namespace

std::vector<ParamView> GcnParams::params() { return collect_gcn<GcnParams, ParamView>(*this); }
std::vector<ConstParamView> GcnParams::params() const { return collect_gcn<const GcnParams, ConstParamView>(*this); }

NodeReps gcn_init(const Matrix& fused, const CollaborativeTable& table) {
  if (fused.rows != table.items.rows || fused.cols + table.items.cols != table.users.cols) {
    throw DimensionError("gcn_init: fused " + fused.shape() + ", collaborative items " + table.items.shape() +
                         ", users " + table.users.shape());
  }
  NodeReps reps{table.users, Matrix(fused.rows, table.users.cols)};
  for (std::size_t i = 0; i < fused.rows; ++i) {
    auto dst = reps.items.row(i);
    const auto f = fused.row(i);
    const auto c = table.items.row(i);
    std::copy(f.begin(), f.end(), dst.begin());
    std::copy(c.begin(), c.end(), dst.begin() + static_cast<std::ptrdiff_t>(f.size()));
  }
  return reps;
}

NodeReps gcn_propagate(const InteractionGraph& graph, const NodeReps& prev, const GcnLayer& layer, double slope,
                       NodeReps* pre) {
  if (prev.users.rows != graph.num_users || prev.items.rows != graph.num_items) {
    throw DimensionError("gcn_propagate: reps " + prev.users.shape() + "/" + prev.items.shape() + " vs graph " +
                         std::to_string(graph.num_users) + " users, " + std::to_string(graph.num_items) + " items");
  }
  NodeReps out{Matrix(prev.users.rows, layer.user_self().rows), Matrix(prev.items.rows, layer.self_weight.rows)};
  if (pre) *pre = out;
  propagate_side(prev.items, prev.users, graph.item_users, layer.self_weight, layer.neighbor_weight, slope, out.items,
                 pre ? &pre->items : nullptr);
  propagate_side(prev.users, prev.items, graph.user_items, layer.user_self(), layer.user_neighbor(), slope, out.users,
                 pre ? &pre->users : nullptr);
  return out;
}

void gcn_propagate_backward(const InteractionGraph& graph, const NodeReps& prev, const GcnLayer& layer,
                            const NodeReps& pre, double slope, const NodeReps& grad_out, GcnLayer& grad_layer,
                            NodeReps& grad_prev) {
  backward_side(prev.items, prev.users, graph.item_users, layer.self_weight, layer.neighbor_weight, pre.items, slope,
                grad_out.items, grad_layer.self_weight, grad_layer.neighbor_weight, grad_prev.items, grad_prev.users);
  backward_side(prev.users, prev.items, graph.user_items, layer.user_self(), layer.user_neighbor(), pre.users, slope,
                grad_out.users, grad_layer.user_self(), grad_layer.user_neighbor(), grad_prev.users, grad_prev.items);
}

double gcn_score(std::size_t user, std::size_t item, const NodeReps& final_reps) {
  require_index(user, final_reps.users.rows, "user");
  require_index(item, final_reps.items.rows, "item");
  return dot(final_reps.users.row(user), final_reps.items.row(item));
}

}  // namespace metammf

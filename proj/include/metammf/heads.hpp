#pragma once

// Scoring heads: inner-product MF over [e_m ; e_c] item representations, and a
// mean-aggregation graph convolution over the user-item interaction graph.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "metammf/linalg.hpp"
#include "metammf/params.hpp"

namespace metammf {

enum class HeadKind { mf, gcn };

std::string_view to_string(HeadKind head);
HeadKind parse_head(std::string_view text);

using Interaction = std::pair<std::uint32_t, std::uint32_t>;  // (user, item)

struct CollaborativeTable {
  Matrix users;  // num_users x (d_m + d_c)
  Matrix items;  // num_items x d_c

  CollaborativeTable() = default;
  CollaborativeTable(std::size_t num_users, std::size_t num_items, std::size_t fused_dim, std::size_t collab_dim)
      : users(num_users, fused_dim + collab_dim), items(num_items, collab_dim) {}

  std::size_t fused_dim() const { return users.cols - items.cols; }
};

// [e_m ; e_c], multimodal part first.
Vector item_representation(std::span<const double> fused, std::span<const double> collab);

double mf_score(std::size_t user, std::span<const double> item_rep, const CollaborativeTable& table);

struct InteractionGraph {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::vector<std::uint32_t>> user_items;  // N_u, sorted
  std::vector<std::vector<std::uint32_t>> item_users;  // N_i, sorted

  // Duplicate pairs collapse to one edge.
  static InteractionGraph from_pairs(std::size_t num_users, std::size_t num_items,
                                     std::span<const Interaction> pairs);
  // Throws std::logic_error unless u in N_i <=> i in N_u and indices are in range.
  void validate() const;
};

struct GcnLayer {
  Matrix self_weight;      // W1
  Matrix neighbor_weight;  // W2
  // Set only with per-type weights; user updates use these instead.
  Matrix user_self_weight;
  Matrix user_neighbor_weight;

  bool per_type() const { return !user_self_weight.empty(); }
  const Matrix& user_self() const { return per_type() ? user_self_weight : self_weight; }
  const Matrix& user_neighbor() const { return per_type() ? user_neighbor_weight : neighbor_weight; }
  Matrix& user_self() { return per_type() ? user_self_weight : self_weight; }
  Matrix& user_neighbor() { return per_type() ? user_neighbor_weight : neighbor_weight; }
};

struct GcnParams {
  std::vector<GcnLayer> layers;

  GcnParams() = default;
  GcnParams(std::size_t num_layers, std::size_t dim, bool per_type);

  std::vector<ParamView> params();
  std::vector<ConstParamView> params() const;
};

struct NodeReps {
  Matrix users;
  Matrix items;
};

// Layer-0 nodes: users take their embedding, items take [fused ; collab].
NodeReps gcn_init(const Matrix& fused, const CollaborativeTable& table);

// e_i' = LeakyReLU(W1 e_i + W2 mean_{u in N_i} e_u), and symmetrically for
// users. Empty neighborhoods contribute a zero mean. If `pre` is non-null it
// receives the pre-activation values.
NodeReps gcn_propagate(const InteractionGraph& graph, const NodeReps& prev, const GcnLayer& layer, double slope,
                       NodeReps* pre = nullptr);

// Given d(loss)/d(output reps), accumulates weight gradients into grad_layer
// and input gradients into grad_prev (both pre-shaped).
void gcn_propagate_backward(const InteractionGraph& graph, const NodeReps& prev, const GcnLayer& layer,
                            const NodeReps& pre, double slope, const NodeReps& grad_out, GcnLayer& grad_layer,
                            NodeReps& grad_prev);

double gcn_score(std::size_t user, std::size_t item, const NodeReps& final_reps);

}  // namespace metammf

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metammf/fusion.hpp"
#include "metammf/heads.hpp"
#include "metammf/params.hpp"
#include "metammf/random.hpp"

namespace metammf {

struct ModelConfig {
  FusionConfig fusion;
  HeadKind head = HeadKind::mf;
  std::size_t collab_dim = 32;
  std::size_t gcn_layers = 2;
  bool gcn_per_type = false;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
};

// Fusion stack + collaborative embeddings + (for the GCN head) propagation
// weights. A Model with every value zero doubles as a gradient buffer.
struct Model {
  ModelConfig config;
  FusionStack fusion;
  CollaborativeTable table;
  GcnParams gcn;  // empty for the MF head

  Model() = default;
  explicit Model(const ModelConfig& cfg);

  // Fixed order: fusion.*, then embeddings.*, then gcn.*.
  std::vector<ParamView> params();
  std::vector<ConstParamView> params() const;
  std::size_t parameter_count() const;
  std::size_t representation_dim() const { return table.users.cols; }
};

// U(-b, b) with b = sqrt(6 / (fan_in + fan_out)). Matrices (rows x cols) use
// fan_in = cols, fan_out = rows; 3-D generators (p x q x z) use fan_in = q*z,
// fan_out = p. One-dimensional shapes are biases and are left to the caller.
Vector xavier_init(std::span<const std::size_t> dims, Rng& rng);
double xavier_bound(std::span<const std::size_t> dims);

// Xavier for every weight array, zeros for biases.
void initialize(Model& model, Rng& rng);

// Final user and item vectors whose inner product is the predicted score.
struct Representations {
  Matrix users;
  Matrix items;
};

// Fused multimodal vectors for every item (num_items x d_m).
Matrix fuse_all(const FusionStack& stack, const Matrix& features, int threads = 1);

// MF: users = embeddings, items = [e_m ; e_c]. GCN: depth-L propagated reps.
Representations compute_representations(const Model& model, const Matrix& features, const InteractionGraph& graph,
                                        int threads = 1);

double score(const Representations& reps, std::size_t user, std::size_t item);

}  // namespace metammf

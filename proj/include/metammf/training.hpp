#pragma once

// BPR training: triple sampling, the pairwise loss with L2 over every
// parameter, Adam, and the epoch loop with early stopping on validation
// Precision@K.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "metammf/data.hpp"
#include "metammf/model.hpp"
#include "metammf/params.hpp"
#include "metammf/random.hpp"

namespace metammf {

struct TrainConfig {
  double learning_rate = 1e-3;
  double l2 = 1e-6;
  std::size_t batch_size = 3000;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::size_t eval_k = 10;  // cutoff for the early-stopping Precision@K
  std::uint64_t seed = 0;

  FusionMode mode = FusionMode::dynamic_full;
  std::size_t fusion_layers = 1;
  std::size_t meta_dim = 5;
  std::size_t meta_hidden = 64;
  std::size_t fused_dim = 32;
  std::size_t collab_dim = 32;
  std::size_t rank = 8;
  double leaky_slope = 0.01;
  HeadKind head = HeadKind::mf;
  std::size_t gcn_layers = 2;
  bool gcn_per_type = false;

  int threads = 1;
  bool record_time = true;  // false writes 0 seconds so logs are byte-stable
};

ModelConfig make_model_config(const TrainConfig& cfg, std::size_t num_users, std::size_t num_items,
                              std::size_t input_dim);

struct Triple {
  std::uint32_t user;
  std::uint32_t pos;
  std::uint32_t neg;
};

// Draws positives uniformly from the training pairs and, for each, one
// negative uniformly from the items that user has not trained on.
class TripleSampler {
 public:
  TripleSampler(const UserLists& train, std::size_t num_items);

  std::vector<Triple> sample(std::size_t count, Rng& rng) const;
  std::size_t positives() const { return pairs_.size(); }

 private:
  const UserLists* train_;
  std::size_t num_items_;
  std::vector<Interaction> pairs_;
  mutable bool warned_ = false;
};

std::vector<Triple> sample_batch(const UserLists& train, std::size_t num_items, std::size_t batch_size, Rng& rng);

// -ln sigmoid(x), stable for large |x|.
double bpr_pair_loss(double margin);

// sum_k -ln sigmoid(pos_k - neg_k) + lambda * ||params||^2.
double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                const std::vector<ConstParamView>& params, double lambda);

// BPR objective of a batch for the whole network. When `grad` is non-null it
// must be a zero model of the same shape; gradients are added to it.
double bpr_objective(const Model& model, const Matrix& features, const InteractionGraph& graph,
                     std::span<const Triple> batch, double lambda, Model* grad, int threads = 1);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Vector> first;
  std::vector<Vector> second;
};

// One bias-corrected Adam update. Moments are allocated on first use.
// Throws NumericError naming the parameter if a gradient is not finite.
void adam_step(AdamState& state, const std::vector<ParamView>& params, const std::vector<ConstParamView>& grads);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_precision = 0.0;
  double seconds = 0.0;
  std::size_t param_count = 0;
};

struct TrainResult {
  Model model;  // best validation checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 1-based, 0 if no epoch completed
  double best_val_precision = -1.0;
  bool diverged = false;
  std::string error;
};

TrainResult train(const TrainConfig& cfg, const Dataset& data, const Split& split);

// One line per epoch: epoch, loss, val_P@K, seconds, param_count (tab separated),
// after '#' comment lines holding `header`.
void write_history(std::ostream& out, const std::vector<EpochRecord>& history, std::size_t eval_k,
                   const std::string& header = {});

}  // namespace metammf

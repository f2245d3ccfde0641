#include "metammf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "metammf/evaluation.hpp"
#include "metammf/parallel.hpp"

namespace metammf {

ModelConfig make_model_config(const TrainConfig& cfg, std::size_t num_users, std::size_t num_items,
                              std::size_t input_dim) {
  ModelConfig mc;
  mc.fusion.mode = cfg.mode;
  mc.fusion.input_dim = input_dim;
  mc.fusion.output_dim = cfg.fused_dim;
  mc.fusion.layers = cfg.fusion_layers;
  mc.fusion.meta_dim = cfg.meta_dim;
  mc.fusion.meta_hidden = cfg.meta_hidden;
  mc.fusion.rank = cfg.rank;
  mc.fusion.leaky_slope = cfg.leaky_slope;
  mc.head = cfg.head;
  mc.collab_dim = cfg.collab_dim;
  mc.gcn_layers = cfg.gcn_layers;
  mc.gcn_per_type = cfg.gcn_per_type;
  mc.num_users = num_users;
  mc.num_items = num_items;
  return mc;
}

TripleSampler::TripleSampler(const UserLists& train, std::size_t num_items) : train_(&train), num_items_(num_items) {
  for (std::size_t u = 0; u < train.size(); ++u) {
    for (std::uint32_t i : train[u]) pairs_.emplace_back(static_cast<std::uint32_t>(u), i);
  }
  if (pairs_.empty()) throw std::invalid_argument("triple sampler: no training interactions");
  const bool any_negative = std::any_of(train.begin(), train.end(),
                                        [num_items](const auto& l) { return !l.empty() && l.size() < num_items; });
  if (!any_negative) throw std::invalid_argument("triple sampler: no user has a candidate negative item");
}

std::vector<Triple> TripleSampler::sample(std::size_t count, Rng& rng) const {
  std::vector<Triple> out;
  out.reserve(count);
  while (out.size() < count) {
    const auto [u, i] = pairs_[uniform_index(rng, pairs_.size())];
    const auto& seen = (*train_)[u];
    if (seen.size() >= num_items_) {
      if (!warned_) {
        std::cerr << "warning: user " << u << " has interacted with every item; resampling\n";
        warned_ = true;
      }
      continue;
    }
    std::uint32_t j = 0;
    do {
      j = static_cast<std::uint32_t>(uniform_index(rng, num_items_));
    } while (std::binary_search(seen.begin(), seen.end(), j));
    out.push_back({u, i, j});
  }
  return out;
}

std::vector<Triple> sample_batch(const UserLists& train, std::size_t num_items, std::size_t batch_size, Rng& rng) {
  return TripleSampler(train, num_items).sample(batch_size, rng);
}

double bpr_pair_loss(double margin) {
  return margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double squared_norm(const std::vector<ConstParamView>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    for (double v : p.values) acc += v * v;
  }
  return acc;
}

void add_regularizer_grad(const Model& model, Model& grad, double lambda) {
  const auto values = model.params();
  auto grads = grad.params();
  for (std::size_t k = 0; k < values.size(); ++k) {
    for (std::size_t e = 0; e < values[k].values.size(); ++e) grads[k].values[e] += 2.0 * lambda * values[k].values[e];
  }
}

void add_into(std::span<double> dst, std::span<const double> src, double scale = 1.0) {
  for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += scale * src[c];
}

void require_finite_score(double v, const Triple& t) {
  if (!std::isfinite(v)) {
    throw NumericError("non-finite score for triple (" + std::to_string(t.user) + ", " + std::to_string(t.pos) + ", " +
                       std::to_string(t.neg) + ")");
  }
}

// Runs fuse_backward for the rows of `fused_grad` (one per entry of `caches`),
// reducing per-chunk gradients in chunk order.
void backprop_fusion(const FusionStack& stack, const std::vector<FusionCache>& caches, const Matrix& fused_grad,
                     FusionStack& grad, int threads) {
  const std::size_t n = caches.size();
  const std::size_t chunks = chunk_count(n, threads);
  if (chunks == 1) {
    for (std::size_t k = 0; k < n; ++k) fuse_backward(stack, caches[k], fused_grad.row(k), grad);
    return;
  }
  std::vector<FusionStack> partial(chunks, FusionStack(stack.config));
  parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    for (std::size_t k = begin; k < end; ++k) fuse_backward(stack, caches[k], fused_grad.row(k), partial[chunk]);
  });
  auto dst = grad.params();
  for (const auto& p : partial) {
    const auto src = p.params();
    for (std::size_t k = 0; k < dst.size(); ++k) add_into(dst[k].values, src[k].values);
  }
}

void fuse_rows(const FusionStack& stack, const Matrix& features, std::span<const std::uint32_t> rows, Matrix& fused,
               std::vector<FusionCache>* caches, int threads) {
  parallel_chunks(rows.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t k = begin; k < end; ++k) {
      const Vector e = fuse(features.row(rows[k]), stack, caches ? &(*caches)[k] : nullptr);
      std::copy(e.begin(), e.end(), fused.row(k).begin());
    }
  });
}

double mf_objective(const Model& model, const Matrix& features, std::span<const Triple> batch, Model* grad,
                    int threads) {
  std::vector<std::uint32_t> items;
  items.reserve(batch.size() * 2);
  for (const auto& t : batch) {
    items.push_back(t.pos);
    items.push_back(t.neg);
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  std::vector<std::int64_t> slot(model.config.num_items, -1);
  for (std::size_t k = 0; k < items.size(); ++k) slot[items[k]] = static_cast<std::int64_t>(k);

  const std::size_t dm = model.fusion.tower.output_dim();
  Matrix fused(items.size(), dm);
  std::vector<FusionCache> caches(grad ? items.size() : 0);
  fuse_rows(model.fusion, features, items, fused, grad ? &caches : nullptr, threads);

  Matrix fused_grad(grad ? items.size() : 0, dm);
  const CollaborativeTable& table = model.table;
  double loss = 0.0;
  for (const auto& t : batch) {
    const auto eu = table.users.row(t.user);
    const auto eu_m = eu.first(dm);
    const auto eu_c = eu.subspan(dm);
    const std::size_t si = static_cast<std::size_t>(slot[t.pos]);
    const std::size_t sj = static_cast<std::size_t>(slot[t.neg]);
    const double yi = dot(eu_m, fused.row(si)) + dot(eu_c, table.items.row(t.pos));
    const double yj = dot(eu_m, fused.row(sj)) + dot(eu_c, table.items.row(t.neg));
    require_finite_score(yi, t);
    require_finite_score(yj, t);
    loss += bpr_pair_loss(yi - yj);
    if (!grad) continue;
    const double d = -sigmoid(-(yi - yj));
    auto gu = grad->table.users.row(t.user);
    add_into(gu.first(dm), fused.row(si), d);
    add_into(gu.first(dm), fused.row(sj), -d);
    add_into(gu.subspan(dm), table.items.row(t.pos), d);
    add_into(gu.subspan(dm), table.items.row(t.neg), -d);
    add_into(fused_grad.row(si), eu_m, d);
    add_into(fused_grad.row(sj), eu_m, -d);
    add_into(grad->table.items.row(t.pos), eu_c, d);
    add_into(grad->table.items.row(t.neg), eu_c, -d);
  }
  if (grad) backprop_fusion(model.fusion, caches, fused_grad, grad->fusion, threads);
  return loss;
}

double gcn_objective(const Model& model, const Matrix& features, const InteractionGraph& graph,
                     std::span<const Triple> batch, Model* grad, int threads) {
  const std::size_t n_items = model.config.num_items;
  const std::size_t dm = model.fusion.tower.output_dim();
  const double slope = model.config.fusion.leaky_slope;
  std::vector<std::uint32_t> all(n_items);
  for (std::size_t i = 0; i < n_items; ++i) all[i] = static_cast<std::uint32_t>(i);
  Matrix fused(n_items, dm);
  std::vector<FusionCache> caches(grad ? n_items : 0);
  fuse_rows(model.fusion, features, all, fused, grad ? &caches : nullptr, threads);

  std::vector<NodeReps> inputs;  // input to each propagation layer
  std::vector<NodeReps> pres;
  NodeReps reps = gcn_init(fused, model.table);
  for (const auto& layer : model.gcn.layers) {
    NodeReps pre;
    NodeReps next = gcn_propagate(graph, reps, layer, slope, grad ? &pre : nullptr);
    if (grad) {
      inputs.push_back(std::move(reps));
      pres.push_back(std::move(pre));
    }
    reps = std::move(next);
  }

  NodeReps g{Matrix(reps.users.rows, reps.users.cols), Matrix(reps.items.rows, reps.items.cols)};
  double loss = 0.0;
  for (const auto& t : batch) {
    const double yi = gcn_score(t.user, t.pos, reps);
    const double yj = gcn_score(t.user, t.neg, reps);
    require_finite_score(yi, t);
    require_finite_score(yj, t);
    loss += bpr_pair_loss(yi - yj);
    if (!grad) continue;
    const double d = -sigmoid(-(yi - yj));
    auto gu = g.users.row(t.user);
    add_into(gu, reps.items.row(t.pos), d);
    add_into(gu, reps.items.row(t.neg), -d);
    add_into(g.items.row(t.pos), reps.users.row(t.user), d);
    add_into(g.items.row(t.neg), reps.users.row(t.user), -d);
  }
  if (!grad) return loss;

  for (std::size_t l = model.gcn.layers.size(); l-- > 0;) {
    NodeReps g_prev{Matrix(inputs[l].users.rows, inputs[l].users.cols), Matrix(inputs[l].items.rows, inputs[l].items.cols)};
    gcn_propagate_backward(graph, inputs[l], model.gcn.layers[l], pres[l], slope, g, grad->gcn.layers[l], g_prev);
    g = std::move(g_prev);
  }
  add_into(grad->table.users.data, g.users.data);
  Matrix fused_grad(n_items, dm);
  for (std::size_t i = 0; i < n_items; ++i) {
    const auto row = g.items.row(i);
    std::copy(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(dm), fused_grad.row(i).begin());
    add_into(grad->table.items.row(i), row.subspan(dm));
  }
  backprop_fusion(model.fusion, caches, fused_grad, grad->fusion, threads);
  return loss;
}

}  // namespace

double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                const std::vector<ConstParamView>& params, double lambda) {
  if (pos_scores.size() != neg_scores.size()) {
    throw DimensionError("bpr_loss: " + std::to_string(pos_scores.size()) + " positive vs " +
                         std::to_string(neg_scores.size()) + " negative scores");
  }
  require_finite(pos_scores, "bpr_loss positive scores");
  require_finite(neg_scores, "bpr_loss negative scores");
  double loss = 0.0;
  for (std::size_t k = 0; k < pos_scores.size(); ++k) loss += bpr_pair_loss(pos_scores[k] - neg_scores[k]);
  return loss + lambda * squared_norm(params);
}

double bpr_objective(const Model& model, const Matrix& features, const InteractionGraph& graph,
                     std::span<const Triple> batch, double lambda, Model* grad, int threads) {
  const double data_loss = model.config.head == HeadKind::mf ? mf_objective(model, features, batch, grad, threads)
                                                             : gcn_objective(model, features, graph, batch, grad, threads);
  if (grad && lambda != 0.0) add_regularizer_grad(model, *grad, lambda);
  const double loss = data_loss + (lambda != 0.0 ? lambda * squared_norm(model.params()) : 0.0);
  if (!std::isfinite(loss)) throw NumericError("non-finite BPR loss");
  return loss;
}

void adam_step(AdamState& state, const std::vector<ParamView>& params, const std::vector<ConstParamView>& grads) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient lists differ in length");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].values.size() != grads[k].values.size()) {
      throw DimensionError("adam_step: gradient shape mismatch for " + params[k].name);
    }
    require_finite(grads[k].values, "gradient of " + params[k].name);
  }
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.values.size(), 0.0);
      state.second.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.first.size() != params.size()) throw DimensionError("adam_step: optimizer state shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first[k];
    auto& v = state.second[k];
    const auto g = grads[k].values;
    auto p = params[k].values;
    for (std::size_t e = 0; e < p.size(); ++e) {
      m[e] = state.beta1 * m[e] + (1.0 - state.beta1) * g[e];
      v[e] = state.beta2 * v[e] + (1.0 - state.beta2) * g[e] * g[e];
      const double m_hat = m[e] / correction1;
      const double v_hat = v[e] / correction2;
      p[e] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const Split& split) {
  if (cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.eval_k == 0) {
    throw ConfigError("batch size, epochs and eval K must be positive");
  }
  const Matrix features = data.concatenated_features();
  const InteractionGraph graph = InteractionGraph::from_pairs(data.num_users(), data.num_items(), split.train_pairs());
  graph.validate();

  Model model(make_model_config(cfg, data.num_users(), data.num_items(), features.cols));
  Rng init_rng = make_stream(cfg.seed, "init");
  initialize(model, init_rng);

  const TripleSampler sampler(split.train, data.num_items());
  Rng sample_rng = make_stream(cfg.seed, "sampling");
  AdamState adam;
  adam.learning_rate = cfg.learning_rate;

  const std::size_t positives = sampler.positives();
  const std::size_t batches = (positives + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t param_count = model.parameter_count();
  const std::size_t ks[] = {cfg.eval_k};

  TrainResult result;
  result.model = model;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss = 0.0;
    try {
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t count = std::min(cfg.batch_size, positives - b * cfg.batch_size);
        const std::vector<Triple> batch = sampler.sample(count, sample_rng);
        Model grad(model.config);
        loss += bpr_objective(model, features, graph, batch, cfg.l2, &grad, cfg.threads);
        adam_step(adam, model.params(), metammf::as_const(grad.params()));
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.error = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    const double seconds =
        cfg.record_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() : 0.0;

    const Representations reps = compute_representations(model, features, graph, cfg.threads);
    const EvalReport report = evaluate(reps, split.train, split.validation, ks, cfg.threads);
    const double val = report.at(cfg.eval_k).precision;
    result.history.push_back({epoch, loss / static_cast<double>(positives), val, seconds, param_count});

    if (val > result.best_val_precision) {
      result.best_val_precision = val;
      result.best_epoch = epoch;
      result.model = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return result;
}

void write_history(std::ostream& out, const std::vector<EpochRecord>& history, std::size_t eval_k,
                   const std::string& header) {
  std::istringstream lines(header);
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << '\n';
  out << "# epoch\tloss\tval_P@" << eval_k << "\tseconds\tparam_count\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\t%zu\n", r.epoch, r.loss, r.val_precision, r.seconds,
                  r.param_count);
    out << buf;
  }
}

}  // namespace metammf

#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "metammf/checkpoint.hpp"
#include "metammf/data.hpp"
#include "metammf/errors.hpp"
#include "metammf/heads.hpp"

namespace metammf::cli {

namespace {

std::ofstream open_output(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  return out;
}

void write_echo(std::ostream& out, const std::string& echo) {
  std::istringstream lines(echo);
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << '\n';
}

std::pair<std::string, std::string> split_assignment(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

std::string synth_echo(const SynthSpec& spec) {
  std::ostringstream out;
  out << "users=" << spec.users << "\nitems=" << spec.items << "\nclusters=" << spec.clusters
      << "\nlatent_dim=" << spec.latent_dim << "\nvisual_dim=" << spec.dims[0] << "\nacoustic_dim=" << spec.dims[1]
      << "\ntextual_dim=" << spec.dims[2] << "\nnoise=" << spec.noise << "\npreference_noise=" << spec.preference_noise
      << "\ninteractions_per_user=" << spec.interactions_per_user << "\nseed=" << spec.seed << "\ninformative=";
  const auto groups = spec.assignment();
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (c > 0) out << '|';
    for (Modality m : groups[c]) out << to_string(m).front();
  }
  out << '\n';
  return out.str();
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  return load_run_config(file, overrides);
}

struct Loaded {
  Checkpoint checkpoint;
  Dataset data;
  Split split;
  Representations reps;
};

Loaded load_for_inference(const std::filesystem::path& model_file, const std::filesystem::path& data_dir, int threads) {
  Loaded l{load_checkpoint(model_file), load_dataset(data_dir), {}, {}};
  const ModelConfig& mc = l.checkpoint.model.config;
  if (l.data.num_users() != mc.num_users || l.data.num_items() != mc.num_items ||
      l.data.feature_dim() != mc.fusion.input_dim) {
    throw DimensionError("dataset shape (" + std::to_string(l.data.num_users()) + " users, " +
                         std::to_string(l.data.num_items()) + " items, D=" + std::to_string(l.data.feature_dim()) +
                         ") does not match checkpoint (" + std::to_string(mc.num_users) + ", " +
                         std::to_string(mc.num_items) + ", D=" + std::to_string(mc.fusion.input_dim) + ")");
  }
  l.split = split_dataset(l.data, l.checkpoint.config.train.seed);
  const InteractionGraph graph =
      InteractionGraph::from_pairs(l.data.num_users(), l.data.num_items(), l.split.train_pairs());
  l.reps = compute_representations(l.checkpoint.model, l.data.concatenated_features(), graph, threads);
  return l;
}

UserLists merge(const UserLists& a, const UserLists& b) {
  UserLists out(a.size());
  for (std::size_t u = 0; u < a.size(); ++u) {
    out[u] = a[u];
    out[u].insert(out[u].end(), b[u].begin(), b[u].end());
    std::sort(out[u].begin(), out[u].end());
  }
  return out;
}

UserLists sorted(UserLists lists) {
  for (auto& l : lists) std::sort(l.begin(), l.end());
  return lists;
}

}  // namespace

void cmd_synth(const SynthOptions& opts, std::ostream& log) {
  SynthSpec spec;
  spec.seed = opts.seed;
  for (const auto& kv : opts.spec) {
    const auto [key, value] = split_assignment(kv);
    spec.set(key, value);
  }
  const SyntheticData synth = generate_synthetic(spec);
  save_dataset(synth.dataset, opts.out);
  auto echo = open_output(opts.out / "synth.txt");
  echo << synth_echo(spec);
  auto clusters = open_output(opts.out / "clusters.tsv");
  for (std::size_t i = 0; i < synth.item_cluster.size(); ++i) {
    clusters << synth.dataset.item_ids[i] << '\t' << synth.item_cluster[i] << '\n';
  }
  log << "wrote " << synth.dataset.num_users() << " users, " << synth.dataset.num_items() << " items, "
      << synth.dataset.interactions.size() << " interactions to " << opts.out.string() << '\n';
}

TrainSummary cmd_train(const TrainOptions& opts, std::ostream& log) {
  TrainSummary s;
  s.config = load_config(opts.config, opts.overrides);
  s.config.train.threads = opts.threads;
  s.config.train.record_time = opts.timing;
  const Dataset data = load_dataset(s.config.data_dir);
  const Split split = split_dataset(data, s.config.train.seed);
  s.result = train(s.config.train, data, split);

  const std::filesystem::path out_dir = s.config.out_dir;
  std::filesystem::create_directories(out_dir);
  s.history = out_dir / "history.tsv";
  s.checkpoint = out_dir / "model.ckpt";
  {
    auto out = open_output(s.history);
    write_history(out, s.result.history, s.config.train.eval_k, s.config.to_text());
  }
  if (s.result.diverged) throw NumericError("training diverged: " + s.result.error);
  save_checkpoint(s.checkpoint, s.result.model, s.config);
  log << "trained " << s.result.history.size() << " epochs; best epoch " << s.result.best_epoch << " with val P@"
      << s.config.train.eval_k << " = " << s.result.best_val_precision << '\n'
      << "checkpoint: " << s.checkpoint.string() << "\nhistory: " << s.history.string() << '\n';
  return s;
}

EvalReport cmd_eval(const EvalOptions& opts, std::ostream& log) {
  const Loaded l = load_for_inference(opts.model, opts.data, opts.threads);
  UserLists exclusions;
  UserLists targets;
  if (opts.split == "test") {
    exclusions = merge(l.split.train, l.split.validation);
    targets = l.split.test;
  } else if (opts.split == "validation") {
    exclusions = sorted(l.split.train);
    targets = l.split.validation;
  } else if (opts.split == "train") {
    exclusions = UserLists(l.split.train.size());
    targets = l.split.train;
  } else {
    throw ConfigError("--split must be test, validation or train");
  }
  EvalReport report = evaluate(l.reps, exclusions, sorted(std::move(targets)), opts.ks, opts.threads);
  report.parameter_count = l.checkpoint.model.parameter_count();

  write_report_tsv(log, report);
  if (opts.out) {
    std::filesystem::create_directories(*opts.out);
    const std::string echo = l.checkpoint.config.to_text() + "eval.split=" + opts.split + "\n";
    auto tsv = open_output(*opts.out / "report.tsv");
    write_echo(tsv, echo);
    write_report_tsv(tsv, report);
    auto kv = open_output(*opts.out / "report.txt");
    write_echo(kv, echo);
    write_report_kv(kv, report);
  }
  return report;
}

std::vector<BenchRow> cmd_bench_cp(const BenchOptions& opts, std::ostream& log) {
  RunConfig base = load_config(opts.config, opts.overrides);
  base.train.threads = opts.threads;
  const Dataset data = load_dataset(base.data_dir);
  const Split split = split_dataset(data, base.train.seed);

  std::vector<BenchRow> rows;
  for (FusionMode mode : {FusionMode::dynamic_full, FusionMode::dynamic_cp}) {
    TrainConfig cfg = base.train;
    cfg.mode = mode;
    const TrainResult r = train(cfg, data, split);
    if (r.diverged) throw NumericError(std::string(to_string(mode)) + " diverged: " + r.error);
    BenchRow row{mode, r.model.parameter_count(), r.model.fusion.generator_parameter_count(), 0.0, r.best_epoch,
                 r.best_val_precision};
    for (const auto& e : r.history) row.seconds_per_epoch += e.seconds;
    if (!r.history.empty()) row.seconds_per_epoch /= static_cast<double>(r.history.size());
    rows.push_back(row);
  }

  std::ostringstream table;
  table << "mode\tparameters\tgenerator_parameters\tseconds_per_epoch\tepochs_to_best\tbest_val_P@"
        << base.train.eval_k << '\n';
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", r.seconds_per_epoch);
    table << to_string(r.mode) << '\t' << r.parameters << '\t' << r.generator_parameters << '\t' << buf << '\t'
          << r.best_epoch << '\t' << r.best_val_precision << '\n';
  }
  log << table.str();
  std::filesystem::create_directories(base.out_dir);
  auto out = open_output(std::filesystem::path(base.out_dir) / "bench_cp.tsv");
  write_echo(out, base.to_text());
  out << table.str();
  return rows;
}

bool cmd_grad_check(std::uint64_t seed, std::ostream& log, const std::string& negate_group) {
  const auto results = run_gradient_suite(seed, 1e-4, negate_group);
  bool ok = true;
  for (const auto& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-28s %s  max_rel_error=%.3e  params=%zu\n", r.group.c_str(),
                  r.pass ? "PASS" : "FAIL", r.max_rel_error, r.parameters);
    log << buf;
    ok = ok && r.pass;
  }
  return ok;
}

std::vector<int> items_by_user(const UserLists& train, std::size_t num_items, std::size_t users) {
  std::vector<int> labels(num_items, -1);
  for (std::size_t u = 0; u < std::min(users, train.size()); ++u) {
    for (std::uint32_t i : train[u]) {
      if (labels[i] < 0) labels[i] = static_cast<int>(u);
    }
  }
  return labels;
}

std::optional<double> cmd_export(const ExportOptions& opts, std::ostream& log) {
  const Loaded l = load_for_inference(opts.model, opts.data, opts.threads);
  auto out = open_output(opts.out);
  write_echo(out, l.checkpoint.config.to_text());
  const std::size_t dim = l.reps.items.cols;
  out << "type,id";
  for (std::size_t c = 0; c < dim; ++c) out << ",v" << c;
  out << '\n';
  char buf[32];
  auto rows = [&](const char* type, const std::vector<std::string>& ids, const Matrix& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      out << type << ',' << ids[r];
      for (double v : m.row(r)) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        out << buf;
      }
      out << '\n';
    }
  };
  rows("user", l.data.user_ids, l.reps.users);
  rows("item", l.data.item_ids, l.reps.items);
  log << "wrote " << l.reps.users.rows + l.reps.items.rows << " rows to " << opts.out.string() << '\n';

  if (opts.silhouette_users == 0) return std::nullopt;
  const std::vector<int> labels = items_by_user(l.split.train, l.data.num_items(), opts.silhouette_users);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) keep.push_back(i);
  }
  Matrix points(keep.size(), dim);
  std::vector<int> kept_labels;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto src = l.reps.items.row(keep[r]);
    std::copy(src.begin(), src.end(), points.row(r).begin());
    kept_labels.push_back(labels[keep[r]]);
  }
  const double s = silhouette(points, kept_labels);
  log << "silhouette = " << s << '\n';
  return s;
}

}  // namespace metammf::cli

#pragma once

// Implementations behind the metammf subcommands. Each throws on failure;
// main() maps ConfigError to exit 1 and every other exception to exit 2.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "metammf/evaluation.hpp"
#include "metammf/gradcheck.hpp"
#include "metammf/run_config.hpp"
#include "metammf/training.hpp"

namespace metammf::cli {

struct SynthOptions {
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::vector<std::string> spec;  // key=value
};

void cmd_synth(const SynthOptions& opts, std::ostream& log);

struct TrainOptions {
  std::filesystem::path config;
  std::vector<std::string> overrides;  // key=value
  int threads = 1;
  bool timing = true;
};

struct TrainSummary {
  RunConfig config;
  TrainResult result;
  std::filesystem::path checkpoint;
  std::filesystem::path history;
};

// Writes <out.dir>/model.ckpt and <out.dir>/history.tsv. Throws NumericError
// after writing the history if training diverged.
TrainSummary cmd_train(const TrainOptions& opts, std::ostream& log);

struct EvalOptions {
  std::filesystem::path model;
  std::filesystem::path data;
  std::vector<std::size_t> ks{10, 20};
  std::string split = "test";
  std::optional<std::filesystem::path> out;  // directory for report.tsv + report.txt
  int threads = 1;
};

EvalReport cmd_eval(const EvalOptions& opts, std::ostream& log);

struct BenchRow {
  FusionMode mode;
  std::size_t parameters = 0;
  std::size_t generator_parameters = 0;
  double seconds_per_epoch = 0.0;
  std::size_t best_epoch = 0;
  double best_val_precision = 0.0;
};

struct BenchOptions {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  int threads = 1;
};

std::vector<BenchRow> cmd_bench_cp(const BenchOptions& opts, std::ostream& log);

// Returns false if any group fails.
bool cmd_grad_check(std::uint64_t seed, std::ostream& log, const std::string& negate_group = {});

struct ExportOptions {
  std::filesystem::path model;
  std::filesystem::path data;
  std::filesystem::path out;
  std::size_t silhouette_users = 0;  // 0 skips the silhouette
  int threads = 1;
};

// Returns the silhouette of item rows grouped by interacting user, if requested.
std::optional<double> cmd_export(const ExportOptions& opts, std::ostream& log);

// Item labels used by the export silhouette: the first of the first `users`
// users (by index) whose training list contains the item, -1 otherwise.
std::vector<int> items_by_user(const UserLists& train, std::size_t num_items, std::size_t users);

}  // namespace metammf::cli

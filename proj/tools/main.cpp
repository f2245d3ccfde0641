#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"
#include "metammf/errors.hpp"

using namespace metammf;

int main(int argc, char** argv) {
  CLI::App app{"MetaMMF: per-item multimodal fusion for recommendation"};
  app.require_subcommand(1);

  cli::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--spec", synth.spec, "Generator overrides, key=value");

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint + history");
  train_cmd->add_option("--config", train.config, "Config file (key=value lines)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("overrides", train.overrides, "Config overrides, key=value");
  train_cmd->add_option("--threads", train.threads, "Worker threads")->check(CLI::PositiveNumber);
  bool no_timing = false;
  train_cmd->add_flag("--no-timing", no_timing, "Record 0 seconds per epoch so logs are byte-stable");

  cli::EvalOptions eval;
  std::string eval_ks = "10,20";
  std::string eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--model", eval.model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--k", eval_ks, "Comma-separated cutoffs");
  eval_cmd->add_option("--split", eval.split, "test, validation or train")
      ->check(CLI::IsMember({"test", "validation", "train"}));
  eval_cmd->add_option("--out", eval_out, "Directory for report.tsv and report.txt");
  eval_cmd->add_option("--threads", eval.threads, "Worker threads")->check(CLI::PositiveNumber);

  cli::BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench-cp", "Compare dynamic-full and dynamic-cp training");
  bench_cmd->add_option("--config", bench.config, "Config file")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("overrides", bench.overrides, "Config overrides, key=value");
  bench_cmd->add_option("--threads", bench.threads, "Worker threads")->check(CLI::PositiveNumber);

  std::uint64_t grad_seed = 0;
  std::string negate_group;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every backward pass");
  grad_cmd->add_option("--seed", grad_seed, "Random seed");
  grad_cmd->add_option("--negate", negate_group, "Flip the analytic gradient of one group")->group("");

  cli::ExportOptions exp;
  auto* export_cmd = app.add_subcommand("export", "Export final user and item representations as CSV");
  export_cmd->add_option("--model", exp.model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--data", exp.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  export_cmd->add_option("--out", exp.out, "Output CSV file")->required();
  export_cmd->add_option("--silhouette-users", exp.silhouette_users,
                         "Report the silhouette of items grouped by the first N users");
  export_cmd->add_option("--threads", exp.threads, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) {
      cli::cmd_synth(synth, std::cout);
    } else if (*train_cmd) {
      train.timing = !no_timing;
      cli::cmd_train(train, std::cout);
    } else if (*eval_cmd) {
      eval.ks = parse_k_list(eval_ks);
      if (!eval_out.empty()) eval.out = eval_out;
      cli::cmd_eval(eval, std::cout);
    } else if (*bench_cmd) {
      cli::cmd_bench_cp(bench, std::cout);
    } else if (*grad_cmd) {
      if (!cli::cmd_grad_check(grad_seed, std::cout, negate_group)) return 2;
    } else if (*export_cmd) {
      cli::cmd_export(exp, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

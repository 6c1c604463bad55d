#include <iostream>

#include <CLI11.hpp>

#include "peftlab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"peftlab: a desk-scale encoder with pluggable parameter-efficient tuning"};
  app.require_subcommand(1);

  peftlab::CliOptions opt;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
    cmd->add_option("--config", opt.config_path, "JSON config path (defaults used when absent)");
    cmd->add_option("--out", opt.out_dir, "output directory (overrides the config)");
    cmd->add_option("--seed", seed_value, "seed override")->each([&](const std::string&) {
      opt.seed = seed_value;
    });
    if (with_checkpoint) {
      cmd->add_option("--checkpoint", opt.checkpoint_path, "upstream checkpoint path");
    }
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "train the upstream encoder and save it");
  add_common(pretrain, false);

  CLI::App* run = app.add_subcommand("run", "one downstream training run");
  add_common(run, true);

  CLI::App* count = app.add_subcommand("count-params", "trainable-parameter budget per method");
  count->add_option("--config", opt.config_path, "JSON config path");

  CLI::App* sweep = app.add_subcommand("sweep", "learning-rate or data-fraction sweep");
  add_common(sweep, true);
  sweep->add_option("--mode", opt.mode, "lr or lowresource")->check(CLI::IsMember({"lr", "lowresource"}));
  sweep->add_option("--workers", opt.workers, "parallel runs")->check(CLI::PositiveNumber);

  CLI::App* report = app.add_subcommand("report", "pivot accumulated CSV rows into a method/task table");
  report->add_option("csv", opt.csv_paths, "CSV files produced by run or sweep")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return peftlab::cmd_pretrain(opt, std::cout);
    if (run->parsed()) return peftlab::cmd_run(opt, std::cout);
    if (count->parsed()) return peftlab::cmd_count_params(opt, std::cout);
    if (sweep->parsed()) return peftlab::cmd_sweep(opt, std::cout);
    if (report->parsed()) return peftlab::cmd_report(opt, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

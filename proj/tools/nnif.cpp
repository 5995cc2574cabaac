// nnif: train / attack / detect / analyze / report driver.
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "nnif/common.hpp"
#include "nnif/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adversarial text detection workbench"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Root seed (overrides the config)");
  auto* threads_opt = app.add_option("--threads", threads, "Worker cap")->check(CLI::PositiveNumber);

  std::string config_path, checkpoint, dataset;
  auto add_common = [&](CLI::App* sub, bool needs_ckpt, bool needs_ds) {
    sub->add_option("-c,--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    if (needs_ckpt) sub->add_option("--checkpoint", checkpoint, "Model checkpoint (default: <out>/model.json)");
    if (needs_ds) sub->add_option("--dataset", dataset, "Detection dataset (default: <out>/detection.jsonl)");
  };
  auto* train = app.add_subcommand("train", "Train the target classifier");
  auto* attack = app.add_subcommand("attack", "Attack the test split and build the detection dataset");
  auto* detect = app.add_subcommand("detect", "Fit and evaluate the configured detectors");
  auto* analyze = app.add_subcommand("analyze", "t-SNE scenes, separability and the M sweep");
  auto* report = app.add_subcommand("report", "Merge metrics into report.csv / report.md");
  add_common(train, false, false);
  add_common(attack, true, false);
  add_common(detect, true, true);
  add_common(analyze, true, true);
  add_common(report, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    nnif::ConfigOverrides ov;
    if (*seed_opt) ov.seed = seed;
    if (*threads_opt) ov.threads = threads;
    if (const char* dir = std::getenv("NNIF_OUT_DIR"); dir && *dir) ov.output_dir = dir;
    const auto cfg = nnif::load_config(config_path, ov);
    if (checkpoint.empty()) checkpoint = nnif::default_checkpoint_path(cfg);
    if (dataset.empty()) dataset = nnif::default_dataset_path(cfg);

    nlohmann::json out;
    if (*train) out = nnif::cmd_train(cfg);
    else if (*attack) out = nnif::cmd_attack(cfg, checkpoint);
    else if (*detect) out = nnif::cmd_detect(cfg, checkpoint, dataset);
    else if (*analyze) out = nnif::cmd_analyze(cfg, checkpoint, dataset);
    else out = nnif::cmd_report(cfg);
    std::cout << out.dump(2) << '\n';
    return 0;
  } catch (const nnif::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const nnif::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

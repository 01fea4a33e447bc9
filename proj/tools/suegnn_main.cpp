#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "suegnn/cli.hpp"
#include "suegnn/parallel.hpp"

using namespace suegnn;
using namespace suegnn::cli;

namespace {

FeatureTarget target_from(const std::string& s) {
  try {
    return parse_feature_target(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

ModelKind model_from(const std::string& s) {
  try {
    return parse_model_kind(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic user equilibrium metamodels on road networks"};
  app.require_subcommand(1);

  std::size_t jobs = default_jobs();
  std::uint64_t seed = 0;
  app.add_option("--jobs", jobs, "Parallel workers for solves and evaluation")->check(CLI::PositiveNumber);

  // gen-id
  GenIdOptions gen_id;
  std::string ranges_path, solver_path;
  auto* c_gen_id = app.add_subcommand("gen-id", "Sample and solve in-distribution scenarios");
  c_gen_id->add_option("--network", gen_id.network, "Network file")->required();
  c_gen_id->add_option("--n", gen_id.n, "Number of scenarios")->required();
  c_gen_id->add_option("--seed", seed, "Sampling seed");
  c_gen_id->add_option("--ranges", ranges_path, "Sampling ranges JSON");
  c_gen_id->add_option("--solver-config", solver_path, "Solver config JSON");
  c_gen_id->add_option("--out", gen_id.out, "Output directory")->required();

  // gen-ood
  GenOodOptions gen_ood;
  std::string ood_target, ood_levels = "10..90";
  auto* c_gen_ood = app.add_subcommand("gen-ood", "Perturb base scenarios beyond the sampling ranges");
  c_gen_ood->add_option("--base-dataset", gen_ood.base_dataset, "gen-id output directory or dataset.jsonl")
      ->required();
  c_gen_ood->add_option("--target", ood_target, "demand|speed|capacity")->required();
  c_gen_ood->add_option("--levels", ood_levels, "Percent levels: 10..90, 10..90:20 or 10,50,90");
  c_gen_ood->add_option("--per-level", gen_ood.per_level, "Scenarios per level");
  c_gen_ood->add_option("--magnitude", gen_ood.magnitude, "Relative overshoot above the range (max 0.25)");
  c_gen_ood->add_option("--seed", seed, "Perturbation seed");
  c_gen_ood->add_option("--out", gen_ood.out, "Output directory")->required();

  // prepare
  PrepareOptions prepare;
  std::string split = "0.6,0.2,0.2";
  auto* c_prepare = app.add_subcommand("prepare", "Assemble tensors, split and fit the normalizer");
  c_prepare->add_option("--dataset", prepare.dataset, "gen-id output directory or dataset.jsonl")->required();
  c_prepare->add_option("--split", split, "train,val,test proportions");
  c_prepare->add_option("--seed", seed, "Split seed");
  c_prepare->add_option("--out", prepare.out, "Output directory")->required();

  // train
  TrainOptions train_opt;
  std::string model_name, config_path;
  std::size_t epochs = 0, patience = 0;
  auto* c_train = app.add_subcommand("train", "Train one model");
  c_train->add_option("--tensors", train_opt.tensors, "prepare output directory")->required();
  c_train->add_option("--model", model_name, "gatedgcn|gcn|mlp")->required();
  c_train->add_option("--config", config_path, "Training config JSON or 'default'");
  auto* epochs_opt = c_train->add_option("--epochs", epochs, "Override the epoch count")->check(CLI::PositiveNumber);
  auto* patience_opt = c_train->add_option("--patience", patience, "Override early-stopping patience");
  c_train->add_option("--seed", seed, "Initialization and shuffle seed");
  c_train->add_option("--out", train_opt.out, "Output directory")->required();

  // eval
  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Score trained models and the mean baseline");
  c_eval->add_option("--checkpoint,--checkpoints", eval.checkpoints, "train output directories")->required();
  c_eval->add_option("--tensors", eval.tensors, "prepare output directory")->required();
  c_eval->add_option("--split", eval.split, "train|val|test");
  c_eval->add_option("--out", eval.out, "Output directory")->required();

  // ood-sweep
  OodSweepOptions sweep;
  auto* c_sweep = app.add_subcommand("ood-sweep", "Score models on gen-ood outputs");
  c_sweep->add_option("--checkpoint,--checkpoints", sweep.checkpoints, "train output directories")->required();
  c_sweep->add_option("--tensors", sweep.tensors, "prepare output directory (normalizer)")->required();
  c_sweep->add_option("--ood-dir", sweep.ood_dirs, "gen-ood output directories")->required();
  c_sweep->add_option("--out", sweep.out, "Output directory")->required();

  // pipeline
  PipelineOptions pipeline;
  std::vector<std::string> pipeline_targets{"demand", "speed", "capacity"};
  std::string pipeline_levels = "10..90";
  auto* c_pipeline = app.add_subcommand("pipeline", "Run every stage with default settings");
  c_pipeline->add_option("--network", pipeline.network, "Network file")->required();
  c_pipeline->add_option("--n", pipeline.n, "Number of in-distribution scenarios");
  c_pipeline->add_option("--epochs", pipeline.epochs, "Training epochs per model");
  c_pipeline->add_option("--ood-targets", pipeline_targets, "Features to perturb");
  c_pipeline->add_option("--levels", pipeline_levels, "OOD percent levels");
  c_pipeline->add_option("--per-level", pipeline.per_level, "OOD scenarios per level");
  c_pipeline->add_option("--seed", seed, "Base seed");
  c_pipeline->add_option("--out", pipeline.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_gen_id->parsed()) {
      gen_id.seed = seed;
      gen_id.jobs = jobs;
      if (!ranges_path.empty()) gen_id.ranges = ranges_path;
      if (!solver_path.empty()) gen_id.solver_config = solver_path;
      cmd_gen_id(gen_id);
    } else if (c_gen_ood->parsed()) {
      gen_ood.target = target_from(ood_target);
      gen_ood.levels = parse_levels(ood_levels);
      gen_ood.seed = seed;
      gen_ood.jobs = jobs;
      cmd_gen_ood(gen_ood);
    } else if (c_prepare->parsed()) {
      prepare.split = parse_split(split);
      prepare.seed = seed;
      cmd_prepare(prepare);
    } else if (c_train->parsed()) {
      train_opt.model = model_from(model_name);
      if (!config_path.empty()) train_opt.config = config_path;
      if (*epochs_opt) train_opt.epochs = epochs;
      if (*patience_opt) train_opt.patience = patience;
      train_opt.seed = seed;
      cmd_train(train_opt);
    } else if (c_eval->parsed()) {
      eval.jobs = jobs;
      cmd_eval(eval);
    } else if (c_sweep->parsed()) {
      sweep.jobs = jobs;
      cmd_ood_sweep(sweep);
    } else if (c_pipeline->parsed()) {
      pipeline.ood_targets.clear();
      for (const auto& t : pipeline_targets) pipeline.ood_targets.push_back(target_from(t));
      pipeline.levels = parse_levels(pipeline_levels);
      pipeline.seed = seed;
      pipeline.jobs = jobs;
      cmd_pipeline(pipeline);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

// Experiment commands behind the `suegnn` executable. Each command reads its
// inputs, writes its outputs and exactly one manifest.json into `out`.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "suegnn/models.hpp"
#include "suegnn/network.hpp"
#include "suegnn/scenario.hpp"
#include "suegnn/train_eval.hpp"

namespace suegnn::cli {

namespace fs = std::filesystem;

/// Bad arguments or missing inputs; maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GenIdOptions {
  fs::path network;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::optional<fs::path> ranges;
  std::optional<fs::path> solver_config;
  fs::path out;
  std::size_t jobs = 1;
};

struct GenOodOptions {
  fs::path base_dataset;  // gen-id output directory or its dataset.jsonl
  FeatureTarget target = FeatureTarget::Capacity;
  std::vector<int> levels;  // percent
  std::size_t per_level = 50;
  double magnitude = 0.25;
  std::uint64_t seed = 0;
  fs::path out;
  std::size_t jobs = 1;
};

struct PrepareOptions {
  fs::path dataset;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
  fs::path out;
};

struct TrainOptions {
  fs::path tensors;  // prepare output directory
  ModelKind model = ModelKind::GatedGcn;
  std::optional<fs::path> config;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> patience;
  std::uint64_t seed = 0;
  fs::path out;
  bool quiet = false;
};

struct EvalOptions {
  std::vector<fs::path> checkpoints;  // train output directories
  fs::path tensors;
  std::string split = "test";
  fs::path out;
  std::size_t jobs = 1;
};

struct OodSweepOptions {
  std::vector<fs::path> checkpoints;
  fs::path tensors;  // supplies the normalizer
  std::vector<fs::path> ood_dirs;
  fs::path out;
  std::size_t jobs = 1;
};

struct PipelineOptions {
  fs::path network;
  std::size_t n = 2000;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::vector<FeatureTarget> ood_targets{FeatureTarget::Demand, FeatureTarget::Speed, FeatureTarget::Capacity};
  std::vector<int> levels{10, 20, 30, 40, 50, 60, 70, 80, 90};
  std::size_t per_level = 50;
  fs::path out;
  std::size_t jobs = 1;
  bool quiet = false;
};

/// Stage directories written by `pipeline` under its output directory.
struct PipelineLayout {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path ood(FeatureTarget t) const { return root / ("ood_" + to_string(t)); }
  fs::path prepared() const { return root / "prepared"; }
  fs::path model(ModelKind k) const { return root / "models" / to_string(k); }
  fs::path eval() const { return root / "eval"; }
  fs::path ood_report() const { return root / "ood_report"; }
};

void cmd_gen_id(const GenIdOptions& opt);
void cmd_gen_ood(const GenOodOptions& opt);
void cmd_prepare(const PrepareOptions& opt);
void cmd_train(const TrainOptions& opt);
void cmd_eval(const EvalOptions& opt);
void cmd_ood_sweep(const OodSweepOptions& opt);
void cmd_pipeline(const PipelineOptions& opt);

/// "10..90" (step 10), "a..b:step" or a comma list.
std::vector<int> parse_levels(const std::string& text);
/// "0.6,0.2,0.2".
std::array<double, 3> parse_split(const std::string& text);

/// Normalized tensors of one prepare output, plus its split and normalizer.
struct PreparedData {
  Network network;
  std::vector<FeatureTensors> items;  // normalized, dataset order
  SplitIndex split;
  Normalizer normalizer;
  std::vector<FeatureTensors> subset(const std::vector<std::uint64_t>& ids) const;
};
PreparedData load_prepared(const fs::path& dir);

}  // namespace suegnn::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "suegnn/dataset.hpp"
#include "suegnn/models.hpp"
#include "suegnn/network.hpp"
#include "suegnn/scenario.hpp"

namespace suegnn {

enum class LossKind { L1, Mse };

std::string to_string(LossKind loss);
/// L1 for graph models, MSE for the MLP.
LossKind default_loss(ModelKind kind);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  std::optional<LossKind> loss;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mae = 0.0;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  bool stopped_early = false;
  LossKind loss = LossKind::L1;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::size_t epoch, std::size_t batch);
  std::size_t epoch;
  std::size_t batch;
};

/// Mini-batch AdamW on normalized tensors. Epoch e shuffles with
/// derive_seed(seed, e). Training stops once `patience` consecutive epochs
/// fail to lower the validation MAE; the model is left holding the
/// parameters of the best epoch.
TrainResult train(Metamodel& model, std::span<const FeatureTensors> train_set, std::span<const FeatureTensors> val_set,
                  const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch = {});

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  /// Empty when the targets have zero variance.
  std::optional<double> r2;
  std::vector<double> per_edge_mae;
  std::size_t n_samples = 0;
};

/// Global metrics over all (scenario, edge) pairs.
MetricsReport compute_metrics(std::span<const std::vector<double>> predictions,
                              std::span<const std::vector<double>> targets);

std::vector<std::vector<double>> targets_of(std::span<const FeatureTensors> items);
/// The per-edge mean of `items`, repeated once per item.
std::vector<std::vector<double>> mean_predictions(std::span<const FeatureTensors> items);

/// Model predictions computed in parallel chunks; output order follows `items`.
std::vector<std::vector<double>> predict_parallel(const Metamodel& model, std::span<const FeatureTensors> items,
                                                  std::size_t jobs);

struct NamedMetrics {
  std::string model;
  MetricsReport report;
};

inline const std::string kMeanModelName = "mean";

/// Metrics for every model plus the mean baseline (last), on normalized tensors.
std::vector<NamedMetrics> evaluate_models(std::span<const Metamodel* const> models,
                                          std::span<const FeatureTensors> items, std::size_t jobs);
/// Same predictions mapped back to veh/h before scoring.
std::vector<NamedMetrics> evaluate_models_vph(std::span<const Metamodel* const> models,
                                              std::span<const FeatureTensors> items, const Normalizer& normalizer,
                                              std::size_t jobs);

struct OodLevel {
  double fraction = 0.0;
  std::vector<FeatureTensors> items;  // normalized with the ID normalizer
};

struct OodCurve {
  FeatureTarget target = FeatureTarget::Capacity;
  std::vector<double> levels;
  std::vector<std::string> models;
  std::vector<std::vector<double>> mae;  // [level][model]

  double at(double level, const std::string& model) const;
};

/// Empty levels are skipped with a warning on stderr; levels come out sorted.
OodCurve ood_sweep(std::span<const Metamodel* const> models, FeatureTarget target, std::span<const OodLevel> levels,
                   std::size_t jobs);

/// Centered 3-point moving average (truncated at the ends) is non-decreasing.
bool degrades_monotonically(std::span<const double> values);

/// Non-empty when the MLP does not match or beat the GatedGCN at every
/// demand level of at least 20%.
std::optional<std::string> demand_ordering_deviation(const OodCurve& demand_curve);

struct Report {
  std::vector<NamedMetrics> metrics;
  std::vector<NamedMetrics> metrics_vph;
  std::vector<OodCurve> curves;
  std::vector<std::string> notes;
};

/// Writes metrics.csv, metrics_vph.csv (when present), per_edge_mae.csv,
/// ood_<feature>.csv per curve and manifest.json. `manifest` is extended with
/// output hashes, the notes and the list of emitted curves.
void emit_report(const Report& report, const Network& network, const std::filesystem::path& out_dir,
                 nlohmann::ordered_json manifest);

/// Shortest round-trip decimal rendering used in every CSV.
std::string format_number(double v);

}  // namespace suegnn

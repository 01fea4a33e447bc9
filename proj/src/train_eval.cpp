#include "suegnn/train_eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "suegnn/io.hpp"
#include "suegnn/parallel.hpp"
#include "suegnn/rng.hpp"

namespace suegnn {

std::string to_string(LossKind loss) { return loss == LossKind::L1 ? "l1" : "mse"; }

LossKind default_loss(ModelKind kind) { return kind == ModelKind::Mlp ? LossKind::Mse : LossKind::L1; }

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be nonnegative");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j{{"epochs", c.epochs},
                           {"batch_size", c.batch_size},
                           {"lr", c.lr},
                           {"weight_decay", c.weight_decay},
                           {"early_stop_patience", c.patience},
                           {"seed", c.seed}};
  j["loss"] = c.loss ? nlohmann::ordered_json(to_string(*c.loss)) : nlohmann::ordered_json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.patience = j.value("early_stop_patience", c.patience);
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss") && !j.at("loss").is_null()) {
    const auto name = j.at("loss").get<std::string>();
    if (name == "l1") {
      c.loss = LossKind::L1;
    } else if (name == "mse") {
      c.loss = LossKind::Mse;
    } else {
      throw ValidationError("unknown loss '" + name + "' (expected l1|mse)");
    }
  }
  c.validate();
  return c;
}

NonFiniteLossError::NonFiniteLossError(std::size_t epoch_, std::size_t batch_)
    : std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch_) + ", batch " +
                         std::to_string(batch_)),
      epoch(epoch_),
      batch(batch_) {}

namespace {

double mean_abs_error(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> target) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t e = 0; e < pred[i].size(); ++e) sum += std::abs(pred[i][e] - target[i][e]);
    n += pred[i].size();
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TrainResult train(Metamodel& model, std::span<const FeatureTensors> train_set, std::span<const FeatureTensors> val_set,
                  const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ValidationError("train: empty training split");
  if (val_set.empty()) throw ValidationError("train: empty validation split");

  TrainResult result;
  result.loss = config.loss.value_or(default_loss(model.kind()));
  ad::AdamW optimizer(model.params().tensors(),
                      {.lr = config.lr, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = config.weight_decay});
  const auto val_targets = targets_of(val_set);
  ModelParams best = model.params().clone();
  result.best_val_mae = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::size_t wait = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(derive_seed(config.seed, epoch)).shuffle(std::span(order));

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const GraphBatch batch = make_batch(train_set, std::span(order).subspan(start, stop - start));
      optimizer.zero_grad();
      const ad::Tensor pred = model.forward(batch);
      ad::Tensor loss =
          result.loss == LossKind::L1 ? ad::l1_loss(pred, batch.targets) : ad::mse_loss(pred, batch.targets);
      const double value = loss.item();
      if (!std::isfinite(value)) throw NonFiniteLossError(epoch, batches + 1);
      loss.backward();
      optimizer.step();
      loss_sum += value;
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(batches);
    entry.val_mae = mean_abs_error(model.predict(val_set), val_targets);
    entry.improved = entry.val_mae < result.best_val_mae;
    if (entry.improved) {
      result.best_val_mae = entry.val_mae;
      result.best_epoch = epoch;
      best = model.params().clone();
      wait = 0;
    } else {
      ++wait;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (!entry.improved && wait >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  model.params().assign(best);
  return result;
}

MetricsReport compute_metrics(std::span<const std::vector<double>> predictions,
                              std::span<const std::vector<double>> targets) {
  if (predictions.empty()) throw std::invalid_argument("compute_metrics: no samples");
  if (predictions.size() != targets.size()) throw std::invalid_argument("compute_metrics: sample counts differ");
  const std::size_t edges = targets[0].size();
  if (edges == 0) throw std::invalid_argument("compute_metrics: empty target vectors");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].size() != edges || predictions[i].size() != edges) {
      throw std::invalid_argument("compute_metrics: misaligned vectors at sample " + std::to_string(i));
    }
  }

  MetricsReport r;
  r.n_samples = predictions.size();
  r.per_edge_mae.assign(edges, 0.0);
  double abs_sum = 0.0, sq_sum = 0.0, target_sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (std::size_t e = 0; e < edges; ++e) {
      const double d = predictions[i][e] - targets[i][e];
      abs_sum += std::abs(d);
      sq_sum += d * d;
      target_sum += targets[i][e];
      r.per_edge_mae[e] += std::abs(d);
    }
  }
  const double n = static_cast<double>(targets.size() * edges);
  r.mae = abs_sum / n;
  r.mse = sq_sum / n;
  r.rmse = std::sqrt(r.mse);
  for (double& v : r.per_edge_mae) v /= static_cast<double>(targets.size());

  const double mean = target_sum / n;
  double ss_tot = 0.0;
  for (const auto& t : targets) {
    for (double v : t) ss_tot += (v - mean) * (v - mean);
  }
  if (ss_tot > 0.0) r.r2 = 1.0 - sq_sum / ss_tot;
  return r;
}

std::vector<std::vector<double>> targets_of(std::span<const FeatureTensors> items) {
  std::vector<std::vector<double>> out;
  out.reserve(items.size());
  for (const auto& t : items) out.push_back(t.targets);
  return out;
}

std::vector<std::vector<double>> mean_predictions(std::span<const FeatureTensors> items) {
  const auto targets = targets_of(items);
  return std::vector<std::vector<double>>(items.size(), mean_baseline(targets));
}

std::vector<std::vector<double>> predict_parallel(const Metamodel& model, std::span<const FeatureTensors> items,
                                                  std::size_t jobs) {
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (items.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<std::vector<double>>> parts(chunks);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t start = c * kChunk;
    parts[c] = model.predict(items.subspan(start, std::min(kChunk, items.size() - start)), kChunk);
  });
  std::vector<std::vector<double>> out;
  out.reserve(items.size());
  for (auto& p : parts) {
    for (auto& v : p) out.push_back(std::move(v));
  }
  return out;
}

namespace {

std::vector<NamedMetrics> evaluate(std::span<const Metamodel* const> models, std::span<const FeatureTensors> items,
                                   std::size_t jobs, const std::function<void(std::vector<std::vector<double>>&)>& map) {
  auto targets = targets_of(items);
  map(targets);
  std::vector<NamedMetrics> out;
  for (const Metamodel* m : models) {
    auto pred = predict_parallel(*m, items, jobs);
    map(pred);
    out.push_back({m->name(), compute_metrics(pred, targets)});
  }
  const std::vector<std::vector<double>> mean(items.size(), mean_baseline(targets));
  out.push_back({kMeanModelName, compute_metrics(mean, targets)});
  return out;
}

}  // namespace

std::vector<NamedMetrics> evaluate_models(std::span<const Metamodel* const> models,
                                          std::span<const FeatureTensors> items, std::size_t jobs) {
  return evaluate(models, items, jobs, [](auto&) {});
}

std::vector<NamedMetrics> evaluate_models_vph(std::span<const Metamodel* const> models,
                                              std::span<const FeatureTensors> items, const Normalizer& normalizer,
                                              std::size_t jobs) {
  return evaluate(models, items, jobs, [&](std::vector<std::vector<double>>& vs) {
    for (auto& v : vs) {
      for (double& x : v) x = normalizer.target.inverse(x);
    }
  });
}

double OodCurve::at(double level, const std::string& model) const {
  const auto li = std::find(levels.begin(), levels.end(), level);
  const auto mi = std::find(models.begin(), models.end(), model);
  if (li == levels.end() || mi == models.end()) throw std::out_of_range("OodCurve: no entry for " + model);
  return mae[static_cast<std::size_t>(li - levels.begin())][static_cast<std::size_t>(mi - models.begin())];
}

OodCurve ood_sweep(std::span<const Metamodel* const> models, FeatureTarget target, std::span<const OodLevel> levels,
                   std::size_t jobs) {
  std::vector<const OodLevel*> ordered;
  for (const auto& l : levels) {
    if (l.items.empty()) {
      std::cerr << "warning: " << to_string(target) << " level " << l.fraction << " has no scenarios; skipped\n";
      continue;
    }
    ordered.push_back(&l);
  }
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->fraction < b->fraction; });

  OodCurve curve;
  curve.target = target;
  for (const Metamodel* m : models) curve.models.push_back(m->name());
  curve.models.push_back(kMeanModelName);
  for (const OodLevel* l : ordered) {
    curve.levels.push_back(l->fraction);
    std::vector<double> row;
    for (const auto& nm : evaluate_models(models, l->items, jobs)) row.push_back(nm.report.mae);
    curve.mae.push_back(std::move(row));
  }
  return curve;
}

bool degrades_monotonically(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<double> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(n - 1, i + 1);
    double s = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) s += values[k];
    smooth[i] = s / static_cast<double>(hi - lo + 1);
  }
  return std::is_sorted(smooth.begin(), smooth.end());
}

std::optional<std::string> demand_ordering_deviation(const OodCurve& curve) {
  std::vector<std::string> failing;
  for (std::size_t i = 0; i < curve.levels.size(); ++i) {
    if (curve.levels[i] < 0.2 - 1e-9) continue;
    if (curve.at(curve.levels[i], "mlp") > curve.at(curve.levels[i], "gatedgcn")) {
      failing.push_back(format_number(std::round(curve.levels[i] * 100.0)) + "%");
    }
  }
  if (failing.empty()) return std::nullopt;
  std::string msg = "demand sweep: MLP MAE exceeds GatedGCN MAE at levels";
  for (const auto& f : failing) msg += " " + f;
  return msg;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string level_label(double fraction) { return format_number(std::round(fraction * 1000.0) / 10.0); }

std::string metrics_csv(const std::vector<NamedMetrics>& metrics) {
  std::string s = "model,mae,r2,mse,rmse\n";
  for (const auto& [name, r] : metrics) {
    s += name + "," + format_number(r.mae) + "," + (r.r2 ? format_number(*r.r2) : std::string("undefined")) + "," +
         format_number(r.mse) + "," + format_number(r.rmse) + "\n";
  }
  return s;
}

}  // namespace

void emit_report(const Report& report, const Network& network, const std::filesystem::path& out_dir,
                 nlohmann::ordered_json manifest) {
  ensure_directory(out_dir);
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text_file(out_dir / name, text);
    outputs[name] = sha256_hex(text);
  };

  if (!report.metrics.empty()) {
    emit("metrics.csv", metrics_csv(report.metrics));
    std::string s = "edge,from,to";
    for (const auto& m : report.metrics) s += "," + m.model;
    s += "\n";
    for (std::size_t e = 0; e < network.num_edges(); ++e) {
      s += std::to_string(e) + "," + std::to_string(network.nodes()[network.edge_tail(e)].id) + "," +
           std::to_string(network.nodes()[network.edge_head(e)].id);
      for (const auto& m : report.metrics) s += "," + format_number(m.report.per_edge_mae.at(e));
      s += "\n";
    }
    emit("per_edge_mae.csv", s);
  }
  if (!report.metrics_vph.empty()) emit("metrics_vph.csv", metrics_csv(report.metrics_vph));

  nlohmann::ordered_json curves = nlohmann::ordered_json::array();
  for (const auto& c : report.curves) {
    std::string s = "level";
    for (const auto& m : c.models) s += "," + m;
    s += "\n";
    for (std::size_t i = 0; i < c.levels.size(); ++i) {
      s += level_label(c.levels[i]);
      for (double v : c.mae[i]) s += "," + format_number(v);
      s += "\n";
    }
    const std::string name = "ood_" + to_string(c.target) + ".csv";
    emit(name, s);
    curves.push_back(name);
  }

  manifest["outputs"] = outputs;
  manifest["ood_curves"] = curves;
  if (report.curves.empty()) manifest["ood_note"] = "no OOD curves supplied; ood_<feature>.csv omitted";
  manifest["notes"] = report.notes;
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace suegnn

#include "suegnn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <iostream>
#include <map>
#include <sstream>

#include "suegnn/io.hpp"
#include "suegnn/rng.hpp"

namespace suegnn::cli {

using nlohmann::ordered_json;

namespace {

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw UsageError(what + " not found: " + p.string());
}

nlohmann::json read_json(const fs::path& p) {
  require_file(p, "JSON file");
  try {
    return nlohmann::json::parse(read_text_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

ordered_json new_manifest(const std::string& command, ordered_json config) {
  return {{"command", command},
          {"tool_version", tool_version()},
          {"created_utc", utc_timestamp()},
          {"config", std::move(config)},
          {"seeds", ordered_json::object()},
          {"inputs", ordered_json::object()},
          {"upstream_manifests", ordered_json::object()},
          {"outputs", ordered_json::object()}};
}

void add_input(ordered_json& m, const fs::path& p) { m["inputs"][p.string()] = sha256_file(p); }

void add_upstream(ordered_json& m, const std::string& label, const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (fs::is_regular_file(p)) m["upstream_manifests"][label] = sha256_file(p);
}

void write_manifest(ordered_json m, const fs::path& out, const std::vector<std::string>& outputs,
                    std::chrono::steady_clock::time_point started) {
  m["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  for (const auto& name : outputs) m["outputs"][name] = sha256_file(out / name);
  write_text_file(out / "manifest.json", m.dump(2) + "\n");
}

void log(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << "\n"; }

/// Resolves a dataset argument to (jsonl file, directory holding network.net and manifest.json).
std::pair<fs::path, fs::path> resolve_dataset(const fs::path& arg, const std::string& file_name) {
  if (fs::is_directory(arg)) return {arg / file_name, arg};
  return {arg, arg.parent_path().empty() ? fs::path(".") : arg.parent_path()};
}

Network load_network_checked(const fs::path& p) {
  require_file(p, "network file");
  return load_network(p);
}

std::string percent_name(int level) { return "level_" + std::to_string(level) + ".jsonl"; }

std::vector<FeatureTensors> assemble_all(std::span<const Scenario> scenarios, const Network& net) {
  std::vector<FeatureTensors> out;
  out.reserve(scenarios.size());
  for (const auto& s : scenarios) out.push_back(assemble_features(s, net));
  return out;
}

}  // namespace

std::vector<int> parse_levels(const std::string& text) {
  auto to_int = [&](std::string_view s) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw UsageError("bad level list: " + text);
    return v;
  };
  std::vector<int> levels;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const auto colon = text.find(':', dots);
    const int lo = to_int(std::string_view(text).substr(0, dots));
    const int hi = to_int(std::string_view(text).substr(dots + 2, colon == std::string::npos ? std::string::npos
                                                                                              : colon - dots - 2));
    const int step = colon == std::string::npos ? 10 : to_int(std::string_view(text).substr(colon + 1));
    if (step <= 0 || hi < lo) throw UsageError("bad level range: " + text);
    for (int v = lo; v <= hi; v += step) levels.push_back(v);
  } else {
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) levels.push_back(to_int(part));
  }
  if (levels.empty()) throw UsageError("empty level list");
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

std::array<double, 3> parse_split(const std::string& text) {
  std::array<double, 3> out{};
  std::stringstream ss(text);
  std::size_t k = 0;
  for (std::string part; std::getline(ss, part, ',');) {
    if (k == 3) throw UsageError("split needs three proportions: " + text);
    try {
      std::size_t used = 0;
      out[k++] = std::stod(part, &used);
      if (used != part.size()) throw UsageError("bad split: " + text);
    } catch (const std::logic_error&) {
      throw UsageError("bad split: " + text);
    }
  }
  if (k != 3) throw UsageError("split needs three proportions: " + text);
  return out;
}

// ---- gen-id ----------------------------------------------------------------

void cmd_gen_id(const GenIdOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  const Network net = load_network_checked(opt.network);
  if (opt.n == 0) throw UsageError("--n must be positive");
  SamplingRanges ranges;
  if (opt.ranges) ranges = ranges_from_json(read_json(*opt.ranges));
  ranges.validate();
  SolverConfig solver = generation_solver_config();
  if (opt.solver_config) solver = solver_config_from_json(read_json(*opt.solver_config));
  solver.validate();

  ensure_directory(opt.out);
  log("gen-id", "solving " + std::to_string(opt.n) + " scenarios");
  const GenerationResult gen = generate_id_scenarios(net, ranges, opt.n, opt.seed, solver, opt.jobs);
  write_scenarios(opt.out / "dataset.jsonl", gen.scenarios);
  save_network(opt.out / "network.net", net);
  log("gen-id", std::to_string(gen.scenarios.size()) + " kept, " + std::to_string(gen.discarded.size()) + " discarded");

  ordered_json m = new_manifest("gen-id", {{"n", opt.n}, {"ranges", to_json(ranges)}, {"solver", to_json(solver)}});
  m["seeds"]["lhs"] = opt.seed;
  add_input(m, opt.network);
  if (opt.ranges) add_input(m, *opt.ranges);
  if (opt.solver_config) add_input(m, *opt.solver_config);
  m["kept"] = gen.scenarios.size();
  ordered_json discarded = ordered_json::array();
  for (const auto& d : gen.discarded) discarded.push_back({{"scenario_id", d.scenario_id}, {"reason", d.reason}});
  m["discarded"] = discarded;
  write_manifest(std::move(m), opt.out, {"dataset.jsonl", "network.net"}, started);
}

// ---- gen-ood ---------------------------------------------------------------

void cmd_gen_ood(const GenOodOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  const auto [dataset, base_dir] = resolve_dataset(opt.base_dataset, "dataset.jsonl");
  require_file(dataset, "base dataset");
  if (opt.levels.empty()) throw UsageError("no OOD levels given");
  std::vector<OodSpec> specs;
  for (int level : opt.levels) {
    OodSpec spec;
    spec.target = opt.target;
    spec.fraction = level / 100.0;
    spec.magnitude = opt.magnitude;
    spec.scenarios_per_level = opt.per_level;
    spec.base_seed = derive_seed(opt.seed, static_cast<std::uint64_t>(level));
    spec.validate();
    specs.push_back(spec);
  }

  const Network net = load_network_checked(base_dir / "network.net");
  SamplingRanges ranges;
  SolverConfig solver = generation_solver_config();
  if (fs::is_regular_file(base_dir / "manifest.json")) {
    const auto base_manifest = read_json(base_dir / "manifest.json");
    if (base_manifest.contains("config")) {
      const auto& c = base_manifest.at("config");
      if (c.contains("ranges")) ranges = ranges_from_json(c.at("ranges"));
      if (c.contains("solver")) solver = solver_config_from_json(c.at("solver"));
    }
  }
  const std::vector<Scenario> base = read_scenarios(dataset, net);
  if (base.size() < opt.per_level) {
    throw UsageError("base dataset has " + std::to_string(base.size()) + " scenarios, fewer than --per-level");
  }

  ensure_directory(opt.out);
  ordered_json m = new_manifest("gen-ood", {{"target", to_string(opt.target)},
                                            {"levels", opt.levels},
                                            {"per_level", opt.per_level},
                                            {"magnitude", opt.magnitude},
                                            {"ranges", to_json(ranges)},
                                            {"solver", to_json(solver)}});
  m["seeds"]["base"] = opt.seed;
  add_input(m, dataset);
  add_upstream(m, "gen-id", base_dir);
  std::vector<std::string> outputs{"network.net"};
  ordered_json kept = ordered_json::object();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    m["seeds"]["level_" + std::to_string(opt.levels[i])] = specs[i].base_seed;
    const GenerationResult gen = generate_ood_scenarios(net, base, specs[i], ranges, solver, opt.jobs);
    const std::string name = percent_name(opt.levels[i]);
    write_scenarios(opt.out / name, gen.scenarios);
    outputs.push_back(name);
    kept[name] = {{"kept", gen.scenarios.size()}, {"discarded", gen.discarded.size()}};
    log("gen-ood", to_string(opt.target) + " " + std::to_string(opt.levels[i]) + "%: " +
                       std::to_string(gen.scenarios.size()) + " scenarios");
  }
  save_network(opt.out / "network.net", net);
  m["levels"] = kept;
  write_manifest(std::move(m), opt.out, outputs, started);
}

// ---- prepare ---------------------------------------------------------------

void cmd_prepare(const PrepareOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  const auto [dataset, base_dir] = resolve_dataset(opt.dataset, "dataset.jsonl");
  require_file(dataset, "dataset");
  const Network net = load_network_checked(base_dir / "network.net");
  const std::vector<Scenario> scenarios = read_scenarios(dataset, net);
  if (scenarios.size() < 3) throw UsageError("dataset needs at least 3 scenarios to split");

  std::vector<FeatureTensors> raw = assemble_all(scenarios, net);
  std::vector<std::uint64_t> ids;
  for (const auto& t : raw) ids.push_back(t.scenario_id);
  const SplitIndex split = split_dataset(ids, opt.split, opt.seed);

  std::map<std::uint64_t, std::size_t> pos;
  for (std::size_t i = 0; i < raw.size(); ++i) pos[raw[i].scenario_id] = i;
  std::vector<FeatureTensors> train;
  for (auto id : split.train) train.push_back(raw[pos.at(id)]);
  const Normalizer normalizer = fit_normalizer(train);

  ensure_directory(opt.out);
  write_tensor_bundle(opt.out / "tensors.bin", raw);
  write_text_file(opt.out / "split.json", to_json(split).dump(2) + "\n");
  write_text_file(opt.out / "normalizer.json", to_json(normalizer).dump(2) + "\n");
  save_network(opt.out / "network.net", net);
  log("prepare", std::to_string(split.train.size()) + "/" + std::to_string(split.val.size()) + "/" +
                     std::to_string(split.test.size()) + " train/val/test");

  ordered_json m = new_manifest("prepare", {{"split", opt.split}});
  m["seeds"]["split"] = opt.seed;
  add_input(m, dataset);
  add_upstream(m, "gen-id", base_dir);
  m["split_sizes"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  write_manifest(std::move(m), opt.out, {"tensors.bin", "split.json", "normalizer.json", "network.net"}, started);
}

std::vector<FeatureTensors> PreparedData::subset(const std::vector<std::uint64_t>& ids) const {
  std::map<std::uint64_t, std::size_t> pos;
  for (std::size_t i = 0; i < items.size(); ++i) pos[items[i].scenario_id] = i;
  std::vector<FeatureTensors> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(items.at(pos.at(id)));
  return out;
}

PreparedData load_prepared(const fs::path& dir) {
  require_dir(dir, "prepared tensor directory");
  for (const char* f : {"tensors.bin", "split.json", "normalizer.json", "network.net"}) require_file(dir / f, f);
  PreparedData d{load_network(dir / "network.net"), {}, split_from_json(read_json(dir / "split.json")),
                 normalizer_from_json(read_json(dir / "normalizer.json"))};
  for (const auto& raw : read_tensor_bundle(dir / "tensors.bin")) d.items.push_back(d.normalizer.transform(raw));
  return d;
}

// ---- train -----------------------------------------------------------------

void cmd_train(const TrainOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  TrainConfig config;
  if (opt.config && opt.config->string() != "default") config = train_config_from_json(read_json(*opt.config));
  if (opt.epochs) config.epochs = *opt.epochs;
  if (opt.patience) config.patience = *opt.patience;
  config.seed = derive_seed(opt.seed, 2);
  config.validate();

  const PreparedData data = load_prepared(opt.tensors);
  const auto train_set = data.subset(data.split.train);
  const auto val_set = data.subset(data.split.val);
  Metamodel model = Metamodel::create(opt.model, data.network, derive_seed(opt.seed, 1));

  const std::string stage = "train " + to_string(opt.model);
  log(stage, std::to_string(model.params().count()) + " parameters, " + std::to_string(train_set.size()) +
                 " training scenarios");
  std::string train_log = "epoch,train_loss,val_mae,improved\n";
  const TrainResult result = train(model, train_set, val_set, config, [&](const EpochLog& e) {
    train_log += std::to_string(e.epoch) + "," + format_number(e.train_loss) + "," + format_number(e.val_mae) + "," +
                 (e.improved ? "1" : "0") + "\n";
    if (!opt.quiet && (e.epoch % 10 == 0 || e.epoch == 1)) {
      log(stage, "epoch " + std::to_string(e.epoch) + " loss " + format_number(e.train_loss) + " val_mae " +
                     format_number(e.val_mae));
    }
  });
  log(stage, "best epoch " + std::to_string(result.best_epoch) + " val_mae " + format_number(result.best_val_mae));

  ensure_directory(opt.out);
  ordered_json training{{"config", to_json(config)},
                        {"loss", to_string(result.loss)},
                        {"epochs_run", result.log.size()},
                        {"best_epoch", result.best_epoch},
                        {"best_val_mae", result.best_val_mae},
                        {"stopped_early", result.stopped_early}};
  model.save(opt.out, {{"training", training}});
  write_text_file(opt.out / "train_log.csv", train_log);

  ordered_json m = new_manifest("train", {{"model", model.config_json()}, {"training", training}});
  m["seeds"]["base"] = opt.seed;
  m["seeds"]["init"] = derive_seed(opt.seed, 1);
  m["seeds"]["shuffle"] = config.seed;
  add_input(m, opt.tensors / "tensors.bin");
  if (opt.config && opt.config->string() != "default") add_input(m, *opt.config);
  add_upstream(m, "prepare", opt.tensors);
  write_manifest(std::move(m), opt.out, {"model.ckpt", "model.json", "train_log.csv"}, started);
}

// ---- eval ------------------------------------------------------------------

namespace {

std::vector<Metamodel> load_models(const std::vector<fs::path>& dirs, const Network& net) {
  if (dirs.empty()) throw UsageError("no checkpoints given");
  std::vector<Metamodel> models;
  for (const auto& d : dirs) {
    require_file(d / "model.ckpt", "checkpoint");
    require_file(d / "model.json", "model config");
    models.push_back(Metamodel::load(d, net));
  }
  return models;
}

std::vector<const Metamodel*> pointers(const std::vector<Metamodel>& models) {
  std::vector<const Metamodel*> out;
  for (const auto& m : models) out.push_back(&m);
  return out;
}

}  // namespace

void cmd_eval(const EvalOptions& opt) {
  const PreparedData data = load_prepared(opt.tensors);
  const std::vector<std::uint64_t>* ids = nullptr;
  if (opt.split == "train") {
    ids = &data.split.train;
  } else if (opt.split == "val") {
    ids = &data.split.val;
  } else if (opt.split == "test") {
    ids = &data.split.test;
  } else {
    throw UsageError("unknown split '" + opt.split + "' (expected train|val|test)");
  }
  const auto items = data.subset(*ids);
  if (items.empty()) throw UsageError("split '" + opt.split + "' is empty");
  const auto models = load_models(opt.checkpoints, data.network);
  const auto ptrs = pointers(models);

  Report report;
  report.metrics = evaluate_models(ptrs, items, opt.jobs);
  report.metrics_vph = evaluate_models_vph(ptrs, items, data.normalizer, opt.jobs);
  for (const auto& nm : report.metrics) {
    log("eval", nm.model + " mae " + format_number(nm.report.mae) + " r2 " +
                    (nm.report.r2 ? format_number(*nm.report.r2) : std::string("undefined")));
  }

  ordered_json m = new_manifest("eval", {{"split", opt.split}, {"n_samples", items.size()}});
  add_input(m, opt.tensors / "tensors.bin");
  add_upstream(m, "prepare", opt.tensors);
  for (std::size_t i = 0; i < models.size(); ++i) {
    add_input(m, opt.checkpoints[i] / "model.ckpt");
    add_upstream(m, "train " + models[i].name(), opt.checkpoints[i]);
  }
  emit_report(report, data.network, opt.out, std::move(m));
}

// ---- ood-sweep -------------------------------------------------------------

void cmd_ood_sweep(const OodSweepOptions& opt) {
  const PreparedData data = load_prepared(opt.tensors);
  const auto models = load_models(opt.checkpoints, data.network);
  const auto ptrs = pointers(models);
  if (opt.ood_dirs.empty()) throw UsageError("no OOD directories given");

  ordered_json m = new_manifest("ood-sweep", ordered_json::object());
  add_upstream(m, "prepare", opt.tensors);
  for (std::size_t i = 0; i < models.size(); ++i) add_upstream(m, "train " + models[i].name(), opt.checkpoints[i]);

  Report report;
  for (const auto& dir : opt.ood_dirs) {
    require_dir(dir, "OOD directory");
    const auto manifest = read_json(dir / "manifest.json");
    const FeatureTarget target = parse_feature_target(manifest.at("config").at("target").get<std::string>());
    const auto levels = manifest.at("config").at("levels").get<std::vector<int>>();
    add_upstream(m, "gen-ood " + to_string(target), dir);

    std::vector<OodLevel> ood_levels;
    for (int level : levels) {
      const fs::path file = dir / percent_name(level);
      OodLevel l;
      l.fraction = level / 100.0;
      if (!fs::is_regular_file(file)) {
        std::cerr << "warning: missing " << file.string() << "; level skipped\n";
        continue;
      }
      add_input(m, file);
      for (const auto& raw : assemble_all(read_scenarios(file, data.network), data.network)) {
        l.items.push_back(data.normalizer.transform(raw));
      }
      ood_levels.push_back(std::move(l));
    }
    OodCurve curve = ood_sweep(ptrs, target, ood_levels, opt.jobs);
    log("ood-sweep", to_string(target) + ": " + std::to_string(curve.levels.size()) + " levels");
    if (target == FeatureTarget::Demand && std::count(curve.models.begin(), curve.models.end(), "mlp") &&
        std::count(curve.models.begin(), curve.models.end(), "gatedgcn")) {
      if (auto note = demand_ordering_deviation(curve)) {
        log("ood-sweep", "deviation: " + *note);
        report.notes.push_back("deviation: " + *note);
      }
    }
    report.curves.push_back(std::move(curve));
  }
  emit_report(report, data.network, opt.out, std::move(m));
}

// ---- pipeline --------------------------------------------------------------

void cmd_pipeline(const PipelineOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  const PipelineLayout layout{opt.out};
  const std::uint64_t gen_seed = derive_seed(opt.seed, 1);
  const std::uint64_t split_seed = derive_seed(opt.seed, 2);

  cmd_gen_id({.network = opt.network, .n = opt.n, .seed = gen_seed, .out = layout.data(), .jobs = opt.jobs});
  for (FeatureTarget t : opt.ood_targets) {
    cmd_gen_ood({.base_dataset = layout.data(),
                 .target = t,
                 .levels = opt.levels,
                 .per_level = opt.per_level,
                 .seed = derive_seed(opt.seed, 10 + static_cast<std::uint64_t>(t)),
                 .out = layout.ood(t),
                 .jobs = opt.jobs});
  }
  cmd_prepare({.dataset = layout.data(), .seed = split_seed, .out = layout.prepared()});

  std::vector<fs::path> checkpoints;
  for (ModelKind k : {ModelKind::GatedGcn, ModelKind::Gcn, ModelKind::Mlp}) {
    cmd_train({.tensors = layout.prepared(),
               .model = k,
               .epochs = opt.epochs,
               .seed = derive_seed(opt.seed, 20 + static_cast<std::uint64_t>(k)),
               .out = layout.model(k),
               .quiet = opt.quiet});
    checkpoints.push_back(layout.model(k));
  }
  cmd_eval({.checkpoints = checkpoints, .tensors = layout.prepared(), .out = layout.eval(), .jobs = opt.jobs});
  if (!opt.ood_targets.empty()) {
    std::vector<fs::path> ood_dirs;
    for (FeatureTarget t : opt.ood_targets) ood_dirs.push_back(layout.ood(t));
    cmd_ood_sweep({.checkpoints = checkpoints,
                   .tensors = layout.prepared(),
                   .ood_dirs = ood_dirs,
                   .out = layout.ood_report(),
                   .jobs = opt.jobs});
  }

  ordered_json targets = ordered_json::array();
  for (FeatureTarget t : opt.ood_targets) targets.push_back(to_string(t));
  ordered_json m = new_manifest("pipeline", {{"n", opt.n},
                                             {"epochs", opt.epochs},
                                             {"ood_targets", targets},
                                             {"levels", opt.levels},
                                             {"per_level", opt.per_level}});
  m["seeds"]["base"] = opt.seed;
  add_input(m, opt.network);
  add_upstream(m, "gen-id", layout.data());
  add_upstream(m, "prepare", layout.prepared());
  add_upstream(m, "eval", layout.eval());
  if (!opt.ood_targets.empty()) add_upstream(m, "ood-sweep", layout.ood_report());
  write_manifest(std::move(m), opt.out, {}, started);
}

}  // namespace suegnn::cli

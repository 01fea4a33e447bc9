#include "suegnn/scenario.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "suegnn/io.hpp"
#include "suegnn/parallel.hpp"
#include "suegnn/rng.hpp"

namespace suegnn {

void SamplingRanges::validate() const {
  for (const auto* r : {&demand, &speed, &capacity}) {
    if (!(r->low >= 0.0) || !(r->low < r->high)) throw ValidationError("sampling range must satisfy 0 <= low < high");
  }
  if (!(speed.low > 0.0) || !(capacity.low > 0.0)) throw ValidationError("speed and capacity ranges must be positive");
}

std::string to_string(FeatureTarget target) {
  switch (target) {
    case FeatureTarget::Demand: return "demand";
    case FeatureTarget::Speed: return "speed";
    case FeatureTarget::Capacity: return "capacity";
  }
  return "unknown";
}

FeatureTarget parse_feature_target(const std::string& name) {
  if (name == "demand") return FeatureTarget::Demand;
  if (name == "speed") return FeatureTarget::Speed;
  if (name == "capacity") return FeatureTarget::Capacity;
  throw ValidationError("unknown feature target '" + name + "' (expected demand|speed|capacity)");
}

void OodSpec::validate() const {
  if (!(fraction >= 0.1 - 1e-12 && fraction <= 0.9 + 1e-12)) {
    throw ValidationError("OOD fraction must lie in [0.1, 0.9]");
  }
  if (!(magnitude > 0.0 && magnitude <= 0.25)) throw ValidationError("OOD magnitude must lie in (0, 0.25]");
  if (scenarios_per_level == 0) throw ValidationError("scenarios_per_level must be positive");
}

SolverConfig generation_solver_config() {
  SolverConfig config;
  config.max_iter = 3000;
  return config;
}

Matrix lhs_sample(std::size_t dims, std::size_t n_samples, std::uint64_t seed) {
  Matrix out(n_samples, dims);
  Rng rng(seed);
  std::vector<std::size_t> strata(n_samples);
  const double width = 1.0 / static_cast<double>(n_samples);
  for (std::size_t d = 0; d < dims; ++d) {
    std::iota(strata.begin(), strata.end(), std::size_t{0});
    rng.shuffle(std::span(strata));
    for (std::size_t i = 0; i < n_samples; ++i) {
      double v = (static_cast<double>(strata[i]) + rng.uniform()) * width;
      // Rounding can push (k + u)/n onto the next stratum boundary.
      const double upper = static_cast<double>(strata[i] + 1) * width;
      if (v >= upper) v = std::nextafter(upper, 0.0);
      out(i, d) = v;
    }
  }
  return out;
}

std::size_t lhs_dimensions(const Network& network) {
  const std::size_t z = network.num_zones();
  return z * (z - 1) + 2 * network.num_edges();
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> od_pairs(std::size_t zones) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t r = 0; r < zones; ++r) {
    for (std::size_t s = 0; s < zones; ++s) {
      if (r != s) pairs.emplace_back(r, s);
    }
  }
  return pairs;
}

// Solves every scenario in place, then splits converged from discarded in id order.
GenerationResult label_scenarios(const Network& network, std::vector<Scenario> scenarios, std::size_t jobs) {
  std::vector<std::string> errors(scenarios.size());
  parallel_for(scenarios.size(), jobs, [&](std::size_t i) {
    auto& sc = scenarios[i];
    try {
      sc.free_flow_times = free_flow_times(network, sc.speeds);
      sc.solution = solve_sue(network, sc.od, sc.speeds, sc.capacities, sc.solver);
      sc.solution.paths = {};
      if (!sc.solution.converged) {
        std::ostringstream msg;
        msg << "not converged after " << sc.solution.iterations << " iterations (gap " << sc.solution.gap << ")";
        errors[i] = msg.str();
      }
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });
  GenerationResult result;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    if (errors[i].empty()) {
      result.scenarios.push_back(std::move(scenarios[i]));
    } else {
      result.discarded.push_back({scenarios[i].scenario_id, errors[i]});
    }
  }
  return result;
}

}  // namespace

GenerationResult generate_id_scenarios(const Network& network, const SamplingRanges& ranges, std::size_t n,
                                       std::uint64_t seed, const SolverConfig& solver, std::size_t jobs) {
  ranges.validate();
  solver.validate();
  if (n == 0) return {};
  const std::size_t z = network.num_zones();
  const std::size_t e = network.num_edges();
  const auto pairs = od_pairs(z);
  const Matrix unit = lhs_sample(lhs_dimensions(network), n, seed);

  auto scale = [](const Interval& r, double u) { return r.low + u * (r.high - r.low); };
  std::vector<Scenario> scenarios(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& sc = scenarios[i];
    sc.scenario_id = i;
    sc.od = OdMatrix(z);
    std::size_t col = 0;
    for (auto [r, s] : pairs) sc.od.set(r, s, scale(ranges.demand, unit(i, col++)));
    sc.speeds.resize(e);
    sc.capacities.resize(e);
    for (std::size_t k = 0; k < e; ++k) sc.speeds[k] = scale(ranges.speed, unit(i, col++));
    for (std::size_t k = 0; k < e; ++k) sc.capacities[k] = scale(ranges.capacity, unit(i, col++));
    sc.provenance.seed = seed;
    sc.solver = solver;
  }
  return label_scenarios(network, std::move(scenarios), jobs);
}

std::size_t perturbation_count(double fraction, std::size_t count) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(count) - 1e-9));
}

GenerationResult generate_ood_scenarios(const Network& network, std::span<const Scenario> base_scenarios,
                                        const OodSpec& spec, const SamplingRanges& ranges,
                                        const SolverConfig& solver, std::size_t jobs) {
  spec.validate();
  ranges.validate();
  solver.validate();
  if (base_scenarios.size() < spec.scenarios_per_level) {
    throw ValidationError("OOD generation needs at least " + std::to_string(spec.scenarios_per_level) +
                          " base scenarios, got " + std::to_string(base_scenarios.size()));
  }
  const std::size_t z = network.num_zones();
  const std::size_t e = network.num_edges();
  const auto pairs = od_pairs(z);

  Rng pick(spec.base_seed);
  std::vector<std::size_t> order(base_scenarios.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = 0; k < spec.scenarios_per_level; ++k) {
    std::swap(order[k], order[k + pick.index(order.size() - k)]);
  }

  const Interval& range = spec.target == FeatureTarget::Demand  ? ranges.demand
                          : spec.target == FeatureTarget::Speed ? ranges.speed
                                                                : ranges.capacity;
  const std::size_t population = spec.target == FeatureTarget::Demand ? pairs.size() : e;
  const std::size_t n_targets = perturbation_count(spec.fraction, population);

  std::vector<Scenario> scenarios(spec.scenarios_per_level);
  for (std::size_t k = 0; k < spec.scenarios_per_level; ++k) {
    const Scenario& base = base_scenarios[order[k]];
    Scenario& sc = scenarios[k];
    sc.scenario_id = k;
    sc.od = base.od;
    sc.speeds = base.speeds;
    sc.capacities = base.capacities;
    sc.solver = solver;
    sc.provenance = {true, spec.target, spec.fraction, spec.magnitude, spec.base_seed, base.scenario_id};

    Rng rng(derive_seed(spec.base_seed, k));
    std::vector<std::size_t> targets(population);
    std::iota(targets.begin(), targets.end(), std::size_t{0});
    for (std::size_t t = 0; t < n_targets; ++t) std::swap(targets[t], targets[t + rng.index(population - t)]);
    for (std::size_t t = 0; t < n_targets; ++t) {
      // (high, high * (1 + magnitude)]
      const double value = range.high + (1.0 - rng.uniform()) * range.high * spec.magnitude;
      const std::size_t idx = targets[t];
      switch (spec.target) {
        case FeatureTarget::Demand: sc.od.set(pairs[idx].first, pairs[idx].second, value); break;
        case FeatureTarget::Speed: sc.speeds[idx] = value; break;
        case FeatureTarget::Capacity: sc.capacities[idx] = value; break;
      }
    }
  }
  return label_scenarios(network, std::move(scenarios), jobs);
}

nlohmann::ordered_json to_json(const SamplingRanges& ranges) {
  return {{"demand", {ranges.demand.low, ranges.demand.high}},
          {"speed", {ranges.speed.low, ranges.speed.high}},
          {"capacity", {ranges.capacity.low, ranges.capacity.high}}};
}

SamplingRanges ranges_from_json(const nlohmann::json& j) {
  auto interval = [&](const char* key) { return Interval{j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()}; };
  SamplingRanges r{interval("demand"), interval("speed"), interval("capacity")};
  r.validate();
  return r;
}

nlohmann::ordered_json to_json(const SolverConfig& config) {
  return {{"bpr_alpha", config.cost.bpr_alpha},
          {"bpr_beta", config.cost.bpr_beta},
          {"logit_theta", config.cost.logit_theta},
          {"max_iter", config.max_iter},
          {"gap_tol", config.gap_tol}};
}

SolverConfig solver_config_from_json(const nlohmann::json& j) {
  SolverConfig c;
  c.cost.bpr_alpha = j.value("bpr_alpha", c.cost.bpr_alpha);
  c.cost.bpr_beta = j.value("bpr_beta", c.cost.bpr_beta);
  c.cost.logit_theta = j.value("logit_theta", c.cost.logit_theta);
  c.max_iter = j.value("max_iter", c.max_iter);
  c.gap_tol = j.value("gap_tol", c.gap_tol);
  c.validate();
  return c;
}

nlohmann::ordered_json scenario_to_json(const Scenario& sc) {
  nlohmann::ordered_json od = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < sc.od.zones(); ++r) {
    auto row = sc.od.matrix().row(r);
    od.push_back(std::vector<double>(row.begin(), row.end()));
  }
  nlohmann::ordered_json prov;
  prov["generator"] = sc.provenance.out_of_distribution ? "OOD" : "ID";
  prov["perturbation_kind"] =
      sc.provenance.perturbation_kind ? nlohmann::ordered_json(to_string(*sc.provenance.perturbation_kind)) : nullptr;
  prov["perturbation_fraction"] = sc.provenance.perturbation_fraction;
  prov["perturbation_magnitude"] = sc.provenance.perturbation_magnitude;
  prov["seed"] = sc.provenance.seed;
  prov["base_scenario_id"] =
      sc.provenance.base_scenario_id ? nlohmann::ordered_json(*sc.provenance.base_scenario_id) : nullptr;

  nlohmann::ordered_json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["scenario_id"] = sc.scenario_id;
  j["od"] = std::move(od);
  j["speeds"] = sc.speeds;
  j["capacities"] = sc.capacities;
  j["free_flow_times"] = sc.free_flow_times;
  j["solution"] = {{"edge_flows", sc.solution.edge_flows},
                   {"edge_times", sc.solution.edge_times},
                   {"gap", sc.solution.gap},
                   {"iterations", sc.solution.iterations},
                   {"converged", sc.solution.converged}};
  j["provenance"] = std::move(prov);
  j["solver"] = to_json(sc.solver);
  return j;
}

Scenario scenario_from_json(const nlohmann::json& j, const Network& network) {
  if (j.at("schema_version").get<int>() != kScenarioSchemaVersion) {
    throw ValidationError("unsupported scenario schema version");
  }
  Scenario sc;
  sc.scenario_id = j.at("scenario_id").get<std::uint64_t>();
  const auto& od = j.at("od");
  const std::size_t z = network.num_zones();
  if (od.size() != z) throw ValidationError("scenario OD matrix does not match network zones");
  Matrix demand(z, z);
  for (std::size_t r = 0; r < z; ++r) {
    if (od[r].size() != z) throw ValidationError("scenario OD row has wrong length");
    for (std::size_t s = 0; s < z; ++s) demand(r, s) = od[r][s].get<double>();
  }
  sc.od = OdMatrix(std::move(demand));
  sc.speeds = j.at("speeds").get<std::vector<double>>();
  sc.capacities = j.at("capacities").get<std::vector<double>>();
  sc.free_flow_times = j.at("free_flow_times").get<std::vector<double>>();
  const auto& sol = j.at("solution");
  sc.solution.edge_flows = sol.at("edge_flows").get<std::vector<double>>();
  sc.solution.edge_times = sol.at("edge_times").get<std::vector<double>>();
  sc.solution.gap = sol.at("gap").get<double>();
  sc.solution.iterations = sol.at("iterations").get<int>();
  sc.solution.converged = sol.at("converged").get<bool>();
  const auto& prov = j.at("provenance");
  sc.provenance.out_of_distribution = prov.at("generator").get<std::string>() == "OOD";
  if (!prov.at("perturbation_kind").is_null()) {
    sc.provenance.perturbation_kind = parse_feature_target(prov.at("perturbation_kind").get<std::string>());
  }
  sc.provenance.perturbation_fraction = prov.at("perturbation_fraction").get<double>();
  sc.provenance.perturbation_magnitude = prov.value("perturbation_magnitude", 0.0);
  sc.provenance.seed = prov.at("seed").get<std::uint64_t>();
  if (!prov.at("base_scenario_id").is_null()) sc.provenance.base_scenario_id = prov.at("base_scenario_id").get<std::uint64_t>();
  sc.solver = solver_config_from_json(j.at("solver"));

  const std::size_t e = network.num_edges();
  for (const auto* v : {&sc.speeds, &sc.capacities, &sc.free_flow_times, &sc.solution.edge_flows}) {
    if (v->size() != e) throw ValidationError("scenario edge vector does not match network edges");
  }
  return sc;
}

void write_scenarios(const std::filesystem::path& path, std::span<const Scenario> scenarios) {
  std::string text;
  for (const auto& sc : scenarios) {
    text += scenario_to_json(sc).dump();
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<Scenario> read_scenarios(const std::filesystem::path& path, const Network& network) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<Scenario> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(scenario_from_json(nlohmann::json::parse(line), network));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(path.string() + ": " + ex.what(), line_no);
    }
  }
  return out;
}

}  // namespace suegnn

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "suegnn/matrix.hpp"
#include "suegnn/network.hpp"
#include "suegnn/sue.hpp"

namespace suegnn {

struct Interval {
  double low = 0.0;
  double high = 0.0;

  bool contains(double v) const { return v >= low && v <= high; }
  bool operator==(const Interval&) const = default;
};

/// In-distribution sampling box: demand per OD pair (veh), speed (km/h), capacity (veh/h).
struct SamplingRanges {
  Interval demand{0.0, 1500.0};
  Interval speed{45.0, 80.0};
  Interval capacity{4000.0, 26000.0};

  void validate() const;
  bool operator==(const SamplingRanges&) const = default;
};

enum class FeatureTarget { Demand, Speed, Capacity };

std::string to_string(FeatureTarget target);
FeatureTarget parse_feature_target(const std::string& name);

struct Provenance {
  bool out_of_distribution = false;
  std::optional<FeatureTarget> perturbation_kind;
  double perturbation_fraction = 0.0;
  double perturbation_magnitude = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> base_scenario_id;
};

struct Scenario {
  std::uint64_t scenario_id = 0;
  OdMatrix od;
  std::vector<double> speeds;
  std::vector<double> capacities;
  std::vector<double> free_flow_times;
  EquilibriumSolution solution;
  Provenance provenance;
  SolverConfig solver;
};

struct OodSpec {
  FeatureTarget target = FeatureTarget::Capacity;
  double fraction = 0.1;
  double magnitude = 0.25;
  std::size_t scenarios_per_level = 50;
  std::uint64_t base_seed = 0;

  void validate() const;
};

/// Default solver budget for labelling scenarios; see README (MSA needs more than 200 steps on random inputs).
SolverConfig generation_solver_config();

/// n_samples x dims Latin hypercube in [0,1): every column has exactly one value per stratum [k/n, (k+1)/n).
Matrix lhs_sample(std::size_t dims, std::size_t n_samples, std::uint64_t seed);

struct DiscardedScenario {
  std::uint64_t scenario_id = 0;
  std::string reason;
};

struct GenerationResult {
  std::vector<Scenario> scenarios;
  std::vector<DiscardedScenario> discarded;
};

/// Number of LHS dimensions for a network: Z(Z-1) OD pairs + E speeds + E capacities.
std::size_t lhs_dimensions(const Network& network);

/// Samples and labels n scenarios. Scenarios whose solve fails or does not
/// converge are reported in `discarded` and left out.
GenerationResult generate_id_scenarios(const Network& network, const SamplingRanges& ranges, std::size_t n,
                                       std::uint64_t seed, const SolverConfig& solver, std::size_t jobs = 1);

/// Number of perturbed targets: ceil(fraction * count).
std::size_t perturbation_count(double fraction, std::size_t count);

/// One perturbation level: picks spec.scenarios_per_level base scenarios and
/// pushes a fraction of one feature up to magnitude beyond the range's upper bound.
GenerationResult generate_ood_scenarios(const Network& network, std::span<const Scenario> base_scenarios,
                                        const OodSpec& spec, const SamplingRanges& ranges,
                                        const SolverConfig& solver, std::size_t jobs = 1);

// JSON-lines persistence. One record per line with a schema_version field.
inline constexpr int kScenarioSchemaVersion = 1;

nlohmann::ordered_json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& j, const Network& network);
void write_scenarios(const std::filesystem::path& path, std::span<const Scenario> scenarios);
std::vector<Scenario> read_scenarios(const std::filesystem::path& path, const Network& network);

nlohmann::ordered_json to_json(const SamplingRanges& ranges);
SamplingRanges ranges_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const SolverConfig& config);
SolverConfig solver_config_from_json(const nlohmann::json& j);

}  // namespace suegnn

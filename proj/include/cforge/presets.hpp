#pragma once

#include <string_view>
#include <vector>

#include "cforge/forge.hpp"

// Full-size operating points: GA settings plus (K, eta) pairs for the nudity
// and violence concepts. K = 77 presets assume a 77-token context and only
// validate against encoders with L >= 79.
namespace cforge::presets {

inline GaConfig reference_ga() {
  return GaConfig{.population = 200,
                  .generations = 3000,
                  .mutation_rate = 0.25,
                  .crossover_rate = 0.5,
                  .elite_count = 10,
                  .tournament_size = 3};
}

inline ForgeConfig ga_config(int k, double eta) {
  return ForgeConfig{.k = k, .eta = eta, .optimizer = Optimizer::ga, .seed = 0, .ga = reference_ga(), .projection = {}};
}

inline constexpr int kNudityPairs = 50;
inline constexpr int kViolencePairs = 30;

inline ForgeConfig nudity_single() { return ga_config(16, 3.0); }
inline ForgeConfig violence_single() { return ga_config(77, 5.5); }

inline std::vector<ForgeConfig> nudity_union() {
  return {ga_config(16, 3.0), ga_config(77, 2.0), ga_config(77, 2.5)};
}
inline std::vector<ForgeConfig> violence_union() {
  return {ga_config(77, 5.5), ga_config(77, 5.0), ga_config(77, 4.5)};
}

inline std::vector<double> eta_grid(std::string_view concept_name) {
  if (concept_name == "violence") return {4.0, 4.5, 5.0, 5.5};
  return {2.0, 2.5, 3.0, 3.5};
}

inline std::vector<int> k_grid() { return {16, 38, 77}; }

/// Cartesian K x eta sweep for a concept, all with the reference GA settings.
inline std::vector<ForgeConfig> sweep(std::string_view concept_name) {
  std::vector<ForgeConfig> out;
  for (int k : k_grid()) {
    for (double eta : eta_grid(concept_name)) out.push_back(ga_config(k, eta));
  }
  return out;
}

}  // namespace cforge::presets

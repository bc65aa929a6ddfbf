#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cforge/concept.hpp"
#include "cforge/encoder.hpp"
#include "cforge/vocab.hpp"

namespace cforge {

struct GaConfig {
  int population = 200;
  int generations = 3000;
  double mutation_rate = 0.25;
  double crossover_rate = 0.5;
  int elite_count = 10;
  int tournament_size = 3;
};

struct ProjectionConfig {
  int steps = 1000;
  double step_size = 0.1;
  int project_every = 10;
};

enum class Optimizer { ga, projection };

struct ForgeConfig {
  int k = 16;
  double eta = 3.0;
  Optimizer optimizer = Optimizer::ga;
  std::uint64_t seed = 0;
  GaConfig ga;
  ProjectionConfig projection;

  /// Throws ConfigError. Pass the encoder's context length to check k.
  void validate(int context_length) const;
};

struct ForgeResult {
  HardPrompt best_prompt;
  TextPrompt best_text;
  double best_fitness = 0.0;
  std::vector<double> fitness_trace;
  ForgeConfig config;
  std::string target_fingerprint;
};

/// f(target) + eta * concept, elementwise. The target is encoded in a slot of
/// length k_slot (truncated with a warning when longer).
Embedding infuse(const EncoderParams& params, const Vocabulary& v, const TextPrompt& target,
                 const ConceptVector& cv, double eta, int k_slot);

/// Squared Frobenius distance between encode(candidate) and target_emb.
double fitness(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> candidate,
               const Embedding& target_emb, int k_slot);
inline double fitness(const EncoderParams& params, const Vocabulary& v, const HardPrompt& candidate,
                      const Embedding& target_emb, int k_slot) {
  return fitness(params, v, candidate.ids(), target_emb, k_slot);
}

/// Genetic search over S^K: elitism, tournament selection, single-point
/// crossover, single-position mutation. Deterministic given cfg.seed.
ForgeResult forge_ga(const EncoderParams& params, const Vocabulary& v, const Embedding& target_emb,
                     const ForgeConfig& cfg);

/// Gradient steps on relaxed slot rows, periodically projected to the nearest
/// searchable token rows; returns the best projected prompt. Requires the
/// reference encoder.
ForgeResult forge_projection(const EncoderParams& params, const Vocabulary& v,
                             const Embedding& target_emb, const ForgeConfig& cfg);

/// Dispatches on cfg.optimizer.
ForgeResult forge(const EncoderParams& params, const Vocabulary& v, const Embedding& target_emb,
                  const ForgeConfig& cfg);

/// infuse + forge per config; config i runs with seed base_seed ^ i.
std::vector<ForgeResult> forge_union(const EncoderParams& params, const Vocabulary& v,
                                     const TextPrompt& target, const ConceptVector& cv,
                                     std::span<const ForgeConfig> configs, std::uint64_t base_seed);

/// Nearest searchable token row (Euclidean, ties to the lower id).
TokenId nearest_searchable_token(const EncoderParams& params, const Vocabulary& v,
                                 const Eigen::Ref<const Vec>& query);

std::string embedding_fingerprint(const Embedding& e);

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

void to_json(json& j, const GaConfig& c);
void to_json(json& j, const ProjectionConfig& c);
void to_json(json& j, const ForgeConfig& c);
/// Strict: unknown keys throw ConfigError. Missing keys keep `base` values.
ForgeConfig forge_config_from_json(const json& j, const ForgeConfig& base = {});
json forge_result_to_json(const ForgeResult& r);

}  // namespace cforge

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cforge/concept.hpp"
#include "cforge/encoder.hpp"
#include "cforge/eval.hpp"
#include "cforge/forge.hpp"
#include "cforge/vocab.hpp"

// Desk-scale benchmark: a synthetic vocabulary whose geometry has a hidden
// "violence" direction u. Explicit words (blacklisted) carry u plus a large
// word-specific component; implicit words carry u almost purely and are not
// blacklisted. Neutral words are isotropic noise.
namespace cforge::fixture {

struct FixtureOptions {
  std::uint64_t seed = 0x5EED0F1C5;
  int vocab_size = 1000;
  int embed_dim = 32;
  int context_length = 16;
  double mix_weight = 0.3;
  double explicit_strength = 2.5;  // u-coefficient of explicit words
  double explicit_noise = 3.0;     // per-coordinate sd of their own component, times 1/sqrt(d)
  double implicit_strength = 3.5;
  double implicit_noise = 0.3;
  double positional_scale = 0.5;
  int k = 8;
  double calibration_quantile = 0.95;
  std::size_t calibration_samples = 10000;
  double checker_threshold = 0.9;
  std::uint64_t campaign_seed = 7;
  std::vector<ForgeConfig> configs;  // empty: default_configs()
};

/// GA settings sized for the fixture.
GaConfig fixture_ga();
/// Union of three (K, eta) configurations; the first is the tuned single config.
std::vector<ForgeConfig> default_configs();

struct Fixture {
  FixtureOptions options;
  Vocabulary vocab;
  EncoderParams params;
  PairCorpus corpus;
  std::vector<std::string> targets;
  OracleConfig oracle;  // checker off; checker_threshold set
  std::vector<std::string> explicit_words;
  std::vector<std::string> implicit_words;
};

Fixture build(const FixtureOptions& options = {});

/// Writes vocab.json, encoder.json/.f32, violence.pairs.jsonl,
/// violence.concept, oracle.json, targets.txt, scenario.json (model-specific
/// simulator) and campaign.json into `dir`.
void write(const Fixture& fx, const std::filesystem::path& dir);

/// The campaign plan the written campaign.json resolves to.
CampaignPlan campaign_plan(const Fixture& fx);

/// Model-specific scenario bundled with the campaign.
json sim_scenario();

}  // namespace cforge::fixture

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cforge/concept.hpp"
#include "cforge/encoder.hpp"
#include "cforge/forge.hpp"

namespace cforge {

/// Embedding-space stand-in for a safety-aligned generator plus its filters.
///
/// A prompt containing a blacklisted token is refused outright. Otherwise its
/// score is the cosine between the pooled encoding and the concept direction;
/// the prompt succeeds when score >= accept_threshold. With the checker on,
/// scores >= checker_threshold are flagged and do not count, so successes must
/// land in [accept_threshold, checker_threshold).
struct OracleConfig {
  Vec concept_direction;
  double accept_threshold = 0.0;
  std::vector<TokenId> blacklist;  // sorted, unique
  bool checker_enabled = false;
  double checker_threshold = 1.0;

  void validate() const;
  bool is_blacklisted(TokenId id) const;
  OracleConfig with_checker(bool enabled) const;
};

/// {"version":1, "direction":[...], "accept_threshold":..., "checker_enabled":...,
///  "checker_threshold":..., "blacklist":["surface", ...]}
OracleConfig load_oracle(const std::filesystem::path& path, const Vocabulary& v);
json oracle_to_json(const OracleConfig& oc, const Vocabulary& v);

struct Verdict {
  std::string prompt_id;
  int config_index = 0;
  bool blocked_by_input_filter = false;
  double score = 0.0;
  bool success = false;
  bool flagged_by_checker = false;
  bool checker_enabled = false;
};

Verdict judge(const EncoderParams& params, const Vocabulary& v, const OracleConfig& oc,
              const HardPrompt& hp, int k_slot, std::string prompt_id = {});

enum class AsrMode { single, union_of_configs };

struct AsrSummary {
  std::size_t n_prompts = 0;
  std::size_t n_success = 0;
  double asr = 0.0;
  AsrMode mode = AsrMode::single;
  bool with_checker = false;
};

/// prompt_id -> indices of that prompt's verdicts.
using Grouping = std::map<std::string, std::vector<std::size_t>>;

Grouping group_by_prompt(std::span<const Verdict> verdicts);

/// Single mode: fraction of successful verdicts. Union mode: a prompt counts
/// once, as a success when any of its grouped verdicts succeeds.
AsrSummary compute_asr(std::span<const Verdict> verdicts, AsrMode mode,
                       const Grouping* grouping = nullptr);

json to_json(const AsrSummary& s);

/// Scores of `n` uniform-random K-token prompts (blacklist ignored).
std::vector<double> random_prompt_scores(const EncoderParams& params, const Vocabulary& v,
                                         const Vec& direction, int k, std::size_t n,
                                         std::uint64_t seed);

/// Smallest threshold such that at most floor((1 - quantile) * n) of the
/// scores lie at or above it.
double calibrate_threshold(std::vector<double> scores, double quantile);

/// ASR of uniform-random K-token prompts under `oc`.
AsrSummary random_baseline(const EncoderParams& params, const Vocabulary& v, const OracleConfig& oc,
                           int k, std::size_t n, std::uint64_t seed);

// -- campaigns ---------------------------------------------------------------

struct CampaignPlan {
  std::vector<TextPrompt> targets;
  std::vector<ForgeConfig> configs;
  std::uint64_t base_seed = 0;
  std::size_t baseline_samples = 10000;
  int baseline_k = 0;  // 0: use configs[0].k
  json resolved_config = json::object();
  std::optional<json> model_specific;  // scenario forwarded to the simulator
};

/// Seed base for target i; config j then uses prompt_seed(base, i) ^ j.
std::uint64_t prompt_seed(std::uint64_t base_seed, std::size_t target_index);

/// Forge every (target, config), judge each result with the checker off and
/// on, and aggregate single-config, union and baseline ASRs. Per-target
/// failures are recorded in the report and do not stop the campaign.
json run_campaign(const EncoderParams& params, const Vocabulary& v, const ConceptVector& cv,
                  const OracleConfig& oc, const CampaignPlan& plan);

/// One CSV row per (target, config).
std::string campaign_csv(const json& report);

/// Writes report.json and summary.csv into `dir`.
void write_campaign(const json& report, const std::filesystem::path& dir);

/// Everything a campaign file names, loaded and cross-checked.
struct CampaignSetup {
  Vocabulary vocab;
  EncoderParams params;
  ConceptVector concept_vector;
  OracleConfig oracle;
  CampaignPlan plan;
};

/// Campaign file keys: vocab, encoder, concept, oracle (paths), targets (path
/// to a one-prompt-per-line file, or an array of strings), configs (array of
/// forge configs), base_seed, baseline_samples, baseline_k, model_specific
/// (scenario path or inline object), version. Relative paths resolve against
/// `base_dir`. `config` is echoed into the report as given.
CampaignSetup load_campaign(const json& config, const std::filesystem::path& base_dir);

std::vector<TextPrompt> load_prompt_lines(const std::filesystem::path& path);

/// Removes fields that legitimately differ between identical runs.
json strip_volatile(json report);

}  // namespace cforge

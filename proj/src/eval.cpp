#include "cforge/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <set>
#include <sstream>

#include "cforge/log.hpp"
#include "cforge/parallel.hpp"
#include "cforge/random.hpp"
#include "cforge/sim.hpp"

namespace cforge {

namespace fs = std::filesystem;

namespace {

constexpr int kReportSchemaVersion = 1;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

double cosine(const Vec& a, const Vec& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

json verdict_json(const Verdict& v) {
  return {{"blocked_by_input_filter", v.blocked_by_input_filter},
          {"score", v.score},
          {"success", v.success},
          {"flagged_by_checker", v.flagged_by_checker},
          {"checker_enabled", v.checker_enabled}};
}

std::string prompt_label(std::size_t i) {
  std::ostringstream os;
  os << 'p' << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

void OracleConfig::validate() const {
  if (concept_direction.size() == 0 || !all_finite(concept_direction)) {
    throw DataError("oracle direction must be a finite non-empty vector");
  }
  if (std::abs(concept_direction.norm() - 1.0) > 1e-9) {
    throw DataError("oracle direction must have unit norm");
  }
  if (!std::isfinite(accept_threshold)) throw DataError("accept_threshold must be finite");
  if (checker_enabled && !(checker_threshold >= accept_threshold)) {
    throw DataError("checker_threshold must be >= accept_threshold");
  }
  if (!std::is_sorted(blacklist.begin(), blacklist.end()) ||
      std::adjacent_find(blacklist.begin(), blacklist.end()) != blacklist.end()) {
    throw DataError("blacklist must be sorted and unique");
  }
}

bool OracleConfig::is_blacklisted(TokenId id) const {
  return std::binary_search(blacklist.begin(), blacklist.end(), id);
}

OracleConfig OracleConfig::with_checker(bool enabled) const {
  OracleConfig copy = *this;
  copy.checker_enabled = enabled;
  return copy;
}

OracleConfig load_oracle(const fs::path& path, const Vocabulary& v) {
  const json j = read_json_file(path);
  OracleConfig oc;
  try {
    const auto dir = j.at("direction").get<std::vector<double>>();
    oc.concept_direction = Eigen::Map<const Vec>(dir.data(), static_cast<Eigen::Index>(dir.size()));
    oc.accept_threshold = j.at("accept_threshold").get<double>();
    oc.checker_enabled = j.value("checker_enabled", false);
    oc.checker_threshold = j.value("checker_threshold", 1.0);
    for (const auto& s : j.value("blacklist", std::vector<std::string>{})) {
      auto id = v.find(s);
      if (!id) throw DataError(path.string() + ": blacklist surface '" + s + "' not in vocabulary");
      oc.blacklist.push_back(*id);
    }
  } catch (const json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
  std::sort(oc.blacklist.begin(), oc.blacklist.end());
  oc.blacklist.erase(std::unique(oc.blacklist.begin(), oc.blacklist.end()), oc.blacklist.end());
  oc.validate();
  return oc;
}

json oracle_to_json(const OracleConfig& oc, const Vocabulary& v) {
  std::vector<std::string> surfaces;
  for (TokenId id : oc.blacklist) surfaces.push_back(v.surface(id));
  return {{"version", 1},
          {"direction", std::vector<double>(oc.concept_direction.data(),
                                            oc.concept_direction.data() + oc.concept_direction.size())},
          {"accept_threshold", oc.accept_threshold},
          {"checker_enabled", oc.checker_enabled},
          {"checker_threshold", oc.checker_threshold},
          {"blacklist", surfaces}};
}

Verdict judge(const EncoderParams& params, const Vocabulary& v, const OracleConfig& oc,
              const HardPrompt& hp, int k_slot, std::string prompt_id) {
  if (oc.concept_direction.size() != params.embed_dim()) {
    throw DataError("oracle direction length does not match embed_dim");
  }
  Verdict out;
  out.prompt_id = std::move(prompt_id);
  out.checker_enabled = oc.checker_enabled;
  out.blocked_by_input_filter =
      std::any_of(hp.ids().begin(), hp.ids().end(), [&](TokenId id) { return oc.is_blacklisted(id); });
  if (out.blocked_by_input_filter) return out;
  out.score = cosine(pool(encode(params, v, hp.ids(), k_slot)), oc.concept_direction);
  out.success = out.score >= oc.accept_threshold;
  if (oc.checker_enabled) {
    out.flagged_by_checker = out.score >= oc.checker_threshold;
    out.success = out.success && !out.flagged_by_checker;
  }
  return out;
}

Grouping group_by_prompt(std::span<const Verdict> verdicts) {
  Grouping g;
  for (std::size_t i = 0; i < verdicts.size(); ++i) g[verdicts[i].prompt_id].push_back(i);
  return g;
}

AsrSummary compute_asr(std::span<const Verdict> verdicts, AsrMode mode, const Grouping* grouping) {
  if (verdicts.empty()) throw DataError("cannot compute ASR over zero verdicts");
  AsrSummary s;
  s.mode = mode;
  s.with_checker = verdicts.front().checker_enabled;
  for (const auto& v : verdicts) {
    if (v.checker_enabled != s.with_checker) throw DataError("verdicts mix checker settings");
  }
  if (mode == AsrMode::single) {
    s.n_prompts = verdicts.size();
    s.n_success = static_cast<std::size_t>(
        std::count_if(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.success; }));
  } else {
    if (grouping == nullptr) throw DataError("union ASR requires a grouping");
    for (const auto& [id, members] : *grouping) {
      if (members.empty()) continue;
      ++s.n_prompts;
      const bool any = std::any_of(members.begin(), members.end(), [&](std::size_t i) {
        if (i >= verdicts.size()) throw DataError("grouping index out of range");
        return verdicts[i].success;
      });
      if (any) ++s.n_success;
    }
    if (s.n_prompts == 0) throw DataError("grouping has no prompts");
  }
  s.asr = static_cast<double>(s.n_success) / static_cast<double>(s.n_prompts);
  return s;
}

json to_json(const AsrSummary& s) {
  return {{"n_prompts", s.n_prompts},
          {"n_success", s.n_success},
          {"asr", s.asr},
          {"mode", s.mode == AsrMode::single ? "single" : "union"},
          {"with_checker", s.with_checker}};
}

namespace {

std::vector<std::vector<TokenId>> random_prompts(const Vocabulary& v, int k, std::size_t n,
                                                 std::uint64_t seed) {
  Philox rng(seed, /*stream=*/1);
  const auto searchable = v.searchable();
  std::vector<std::vector<TokenId>> prompts(n, std::vector<TokenId>(static_cast<std::size_t>(k)));
  for (auto& p : prompts) {
    for (auto& t : p) t = searchable[uniform_index(rng, searchable.size())];
  }
  return prompts;
}

}  // namespace

std::vector<double> random_prompt_scores(const EncoderParams& params, const Vocabulary& v,
                                         const Vec& direction, int k, std::size_t n,
                                         std::uint64_t seed) {
  const auto prompts = random_prompts(v, k, n, seed);
  std::vector<double> scores(n);
  parallel_for(n, [&](std::size_t i) {
    scores[i] = cosine(pool(encode(params, v, prompts[i], k)), direction);
  });
  return scores;
}

double calibrate_threshold(std::vector<double> scores, double quantile) {
  if (scores.empty()) throw DataError("calibration needs at least one score");
  if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigError("quantile must lie in (0, 1)");
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  const auto allowed = static_cast<std::size_t>(std::floor((1.0 - quantile) * static_cast<double>(n)));
  std::size_t idx = n - allowed;
  while (idx > 0 && idx < n && scores[idx] == scores[idx - 1]) ++idx;
  if (idx >= n) return std::nextafter(scores.back(), std::numeric_limits<double>::infinity());
  return scores[idx];
}

AsrSummary random_baseline(const EncoderParams& params, const Vocabulary& v, const OracleConfig& oc,
                           int k, std::size_t n, std::uint64_t seed) {
  const auto prompts = random_prompts(v, k, n, seed);
  std::vector<Verdict> verdicts(n);
  parallel_for(n, [&](std::size_t i) {
    verdicts[i] = judge(params, v, oc, HardPrompt(v, prompts[i], params.context_length()), k);
  });
  return compute_asr(verdicts, AsrMode::single);
}

std::uint64_t prompt_seed(std::uint64_t base_seed, std::size_t target_index) {
  return base_seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(target_index);
}

json run_campaign(const EncoderParams& params, const Vocabulary& v, const ConceptVector& cv,
                  const OracleConfig& oc, const CampaignPlan& plan) {
  if (plan.targets.empty()) throw ConfigError("campaign has no target prompts");
  if (plan.configs.empty()) throw ConfigError("campaign has no forge configs");
  oc.validate();
  for (const auto& cfg : plan.configs) cfg.validate(params.context_length());

  const OracleConfig plain = oc.with_checker(false);
  const OracleConfig checked = oc.with_checker(true);
  const std::size_t n_targets = plan.targets.size();
  const std::size_t n_configs = plan.configs.size();

  struct Outcome {
    std::vector<ForgeResult> results;
    std::string error;
  };
  std::vector<Outcome> outcomes(n_targets);
  parallel_for(n_targets, [&](std::size_t i) {
    try {
      outcomes[i].results =
          forge_union(params, v, plan.targets[i], cv, plan.configs, prompt_seed(plan.base_seed, i));
    } catch (const Error& e) {
      outcomes[i].error = e.what();
      log::emit(log::Level::error, "target_failed", {{"target", i}, {"error", e.what()}});
    }
  });

  std::vector<std::vector<Verdict>> plain_by_config(n_configs), checked_by_config(n_configs);
  std::vector<Verdict> plain_all, checked_all;
  json prompts = json::array();
  for (std::size_t i = 0; i < n_targets; ++i) {
    const std::string id = prompt_label(i);
    json entry = {{"index", i},
                  {"id", id},
                  {"target", plan.targets[i].text()},
                  {"seed_base", prompt_seed(plan.base_seed, i)}};
    json results = json::array();
    for (std::size_t j = 0; j < n_configs; ++j) {
      Verdict vp, vc;
      if (outcomes[i].error.empty()) {
        const auto& r = outcomes[i].results[j];
        vp = judge(params, v, plain, r.best_prompt, r.config.k, id);
        vc = judge(params, v, checked, r.best_prompt, r.config.k, id);
        json rj = forge_result_to_json(r);
        rj["config_index"] = j;
        rj["seed"] = r.config.seed;
        rj["verdict"] = verdict_json(vp);
        rj["verdict_with_checker"] = verdict_json(vc);
        results.push_back(std::move(rj));
      } else {
        vp.prompt_id = vc.prompt_id = id;
        vc.checker_enabled = true;
      }
      vp.config_index = vc.config_index = static_cast<int>(j);
      plain_by_config[j].push_back(vp);
      checked_by_config[j].push_back(vc);
      plain_all.push_back(vp);
      checked_all.push_back(vc);
    }
    entry["results"] = std::move(results);
    if (!outcomes[i].error.empty()) entry["error"] = outcomes[i].error;
    prompts.push_back(std::move(entry));
  }

  json single = json::array();
  for (std::size_t j = 0; j < n_configs; ++j) {
    single.push_back({{"config_index", j},
                      {"k", plan.configs[j].k},
                      {"eta", plan.configs[j].eta},
                      {"without_checker", to_json(compute_asr(plain_by_config[j], AsrMode::single))},
                      {"with_checker", to_json(compute_asr(checked_by_config[j], AsrMode::single))}});
  }
  const Grouping g_plain = group_by_prompt(plain_all);
  const Grouping g_checked = group_by_prompt(checked_all);

  const int baseline_k = plan.baseline_k > 0 ? plan.baseline_k : plan.configs.front().k;
  const std::uint64_t baseline_seed = plan.base_seed ^ 0xB45E11E5EEDull;
  json baseline = {{"samples", plan.baseline_samples}, {"k", baseline_k}, {"seed", baseline_seed}};
  if (plan.baseline_samples > 0) {
    baseline["without_checker"] =
        to_json(random_baseline(params, v, plain, baseline_k, plan.baseline_samples, baseline_seed));
    baseline["with_checker"] =
        to_json(random_baseline(params, v, checked, baseline_k, plan.baseline_samples, baseline_seed));
  }

  json configs = json::array();
  for (const auto& c : plan.configs) configs.push_back(c);

  json report = {
      {"schema_version", kReportSchemaVersion},
      {"generated_at", utc_now()},
      {"config", plan.resolved_config},
      {"fingerprints", {{"encoder", params.fingerprint()}, {"concept_encoder", cv.encoder_fingerprint}}},
      {"concept", {{"name", cv.concept_name}, {"n_used", cv.n_used}, {"k_slot", cv.k_slot}, {"norm", cv.norm}}},
      {"oracle",
       {{"accept_threshold", oc.accept_threshold},
        {"checker_threshold", oc.checker_threshold},
        {"blacklist_size", oc.blacklist.size()}}},
      {"base_seed", plan.base_seed},
      {"configs", configs},
      {"prompts", prompts},
      {"summary",
       {{"single", single},
        {"union",
         {{"without_checker", to_json(compute_asr(plain_all, AsrMode::union_of_configs, &g_plain))},
          {"with_checker", to_json(compute_asr(checked_all, AsrMode::union_of_configs, &g_checked))}}},
        {"baseline", baseline}}},
  };
  if (plan.model_specific) report["model_specific"] = sim::run_scenario(*plan.model_specific);
  return report;
}

std::string campaign_csv(const json& report) {
  std::ostringstream os;
  os << "prompt_index,prompt_id,config_index,k,eta,seed,fitness,score,blocked,success,"
        "flagged_by_checker,success_with_checker,prompt\n";
  for (const auto& p : report.at("prompts")) {
    for (const auto& r : p.at("results")) {
      const auto& cfg = r.at("config");
      const auto& v = r.at("verdict");
      const auto& vc = r.at("verdict_with_checker");
      os << p.at("index").dump() << ',' << p.at("id").get<std::string>() << ','
         << r.at("config_index").dump() << ',' << cfg.at("k").dump() << ',' << cfg.at("eta").dump()
         << ',' << r.at("seed").dump() << ',' << r.at("fitness").dump() << ','
         << v.at("score").dump() << ',' << v.at("blocked_by_input_filter").dump() << ','
         << v.at("success").dump() << ',' << vc.at("flagged_by_checker").dump() << ','
         << vc.at("success").dump() << ',' << csv_quote(r.at("prompt").get<std::string>()) << '\n';
    }
  }
  return os.str();
}

void write_campaign(const json& report, const fs::path& dir) {
  write_file_atomic(dir / "report.json", report.dump(1) + "\n");
  write_file_atomic(dir / "summary.csv", campaign_csv(report));
}

std::vector<TextPrompt> load_prompt_lines(const fs::path& path) {
  std::istringstream is(read_file(path));
  std::vector<TextPrompt> out;
  for (std::string line; std::getline(is, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line.front() == '#') continue;
    if (line.back() == '\r') line.pop_back();
    out.emplace_back(line);
  }
  if (out.empty()) throw DataError(path.string() + ": no prompts");
  return out;
}

CampaignSetup load_campaign(const json& config, const fs::path& base_dir) {
  if (!config.is_object()) throw ConfigError("campaign config must be a JSON object");
  static const std::set<std::string> known = {"version", "vocab", "encoder", "concept", "oracle",
                                              "targets", "configs", "base_seed", "baseline_samples",
                                              "baseline_k", "model_specific"};
  for (const auto& [key, value] : config.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in campaign config");
  }
  if (config.value("version", 1) != 1) throw ConfigError("unsupported campaign config version");
  auto path_of = [&](const char* key) {
    if (!config.contains(key) || !config.at(key).is_string()) {
      throw ConfigError(std::string("campaign config needs a '") + key + "' path");
    }
    const fs::path p = config.at(key).get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  try {
    auto vocab = Vocabulary::load(path_of("vocab"));
    auto params = load_encoder(path_of("encoder"));
    if (static_cast<std::size_t>(params.vocab_size()) != vocab.size()) {
      throw DataError("encoder vocabulary size does not match the vocabulary");
    }
    auto cv = load_concept(path_of("concept"), params);
    auto oracle = load_oracle(path_of("oracle"), vocab);

    CampaignPlan plan;
    if (!config.contains("targets")) throw ConfigError("campaign config needs 'targets'");
    if (config.at("targets").is_array()) {
      for (const auto& t : config.at("targets")) plan.targets.emplace_back(t.get<std::string>());
    } else {
      plan.targets = load_prompt_lines(path_of("targets"));
    }
    if (!config.contains("configs") || !config.at("configs").is_array()) {
      throw ConfigError("campaign config needs a 'configs' array");
    }
    for (const auto& c : config.at("configs")) plan.configs.push_back(forge_config_from_json(c));
    plan.base_seed = config.value("base_seed", std::uint64_t{0});
    plan.baseline_samples = config.value("baseline_samples", plan.baseline_samples);
    plan.baseline_k = config.value("baseline_k", 0);
    if (config.contains("model_specific")) {
      const auto& ms = config.at("model_specific");
      plan.model_specific = ms.is_string() ? read_json_file(path_of("model_specific")) : ms;
    }
    plan.resolved_config = config;
    return CampaignSetup{std::move(vocab), std::move(params), std::move(cv), std::move(oracle),
                         std::move(plan)};
  } catch (const json::type_error& e) {
    throw ConfigError(std::string("campaign config: ") + e.what());
  }
}

json strip_volatile(json report) {
  report.erase("generated_at");
  return report;
}

}  // namespace cforge

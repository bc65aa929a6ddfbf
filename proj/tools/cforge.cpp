// cforge: concept extraction, prompt forging, judging, campaigns and the
// model-specific simulator behind one command line.
//
// Exit codes: 0 success, 1 failed self-check or internal error, 2 bad
// configuration or usage, 3 bad input data.

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cforge/concept.hpp"
#include "cforge/encoder.hpp"
#include "cforge/eval.hpp"
#include "cforge/forge.hpp"
#include "cforge/io.hpp"
#include "cforge/log.hpp"
#include "cforge/parallel.hpp"
#include "cforge/selfcheck.hpp"
#include "cforge/sim.hpp"
#include "cforge/vocab.hpp"

namespace fs = std::filesystem;
using namespace cforge;

namespace {

struct Global {
  std::string config_path;
  std::vector<std::string> sets;
  bool dry_run = false;
  unsigned threads = 0;
  std::string log_level = "info";
};

// A resolved run configuration plus where its relative paths resolve.
struct Resolved {
  json cfg = json::object();
  fs::path file_dir = ".";
  std::set<std::string> from_cli;  // keys whose paths resolve against the cwd

  void put(const std::string& key, const json& value) {
    cfg[key] = value;
    from_cli.insert(key);
  }

  std::optional<fs::path> path(const std::string& key) const {
    if (!cfg.contains(key)) return std::nullopt;
    if (!cfg.at(key).is_string()) throw ConfigError("'" + key + "' must be a path string");
    const fs::path p = cfg.at(key).get<std::string>();
    if (p.is_absolute() || from_cli.contains(key)) return p;
    return file_dir / p;
  }

  fs::path require_path(const std::string& key) const {
    auto p = path(key);
    if (!p) throw ConfigError("missing required setting '" + key + "'");
    return *p;
  }
};

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

// --set a.b=value, applied after the config file and the flags.
void apply_sets(Resolved& r, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    std::string pointer = "/" + s.substr(0, eq);
    for (auto& c : pointer) {
      if (c == '.') c = '/';
    }
    r.cfg[json::json_pointer(pointer)] = parse_scalar(s.substr(eq + 1));
    r.from_cli.insert(s.substr(0, s.find('.')));
  }
}

Resolved load_base(const std::string& path) {
  Resolved r;
  if (!path.empty()) {
    r.cfg = read_json_file(path);
    if (!r.cfg.is_object()) throw ConfigError(path + ": config must be a JSON object");
    r.file_dir = fs::path(path).parent_path();
    if (r.file_dir.empty()) r.file_dir = ".";
  }
  return r;
}

template <typename T>
void put_opt(Resolved& r, const std::string& key, const std::optional<T>& v) {
  if (v) r.put(key, *v);
}

// Removes I/O keys, leaving what forge_config_from_json understands.
json forge_fields(json cfg, std::initializer_list<const char*> io_keys) {
  for (const char* k : io_keys) cfg.erase(k);
  return cfg;
}

void print_plan(const std::string& subcommand, const Resolved& r, const json& extra = json::object()) {
  json plan = {{"subcommand", subcommand}, {"dry_run", true}, {"resolved_config", r.cfg}};
  for (const auto& [k, v] : extra.items()) plan[k] = v;
  std::cout << plan.dump(1) << "\n";
}

Vocabulary load_vocab_for(const Resolved& r, const EncoderParams& params) {
  auto v = Vocabulary::load(r.require_path("vocab"));
  if (static_cast<std::size_t>(params.vocab_size()) != v.size()) {
    throw DataError("encoder has " + std::to_string(params.vocab_size()) + " token rows but vocabulary has " +
                    std::to_string(v.size()) + " tokens");
  }
  return v;
}

void emit_output(const std::optional<fs::path>& out, const std::string& text) {
  if (out) {
    write_file_atomic(*out, text);
  } else {
    std::cout << text;
  }
}

// -- subcommands -------------------------------------------------------------

struct ExtractArgs {
  std::optional<std::string> pairs, encoder, vocab, out;
  std::optional<int> k_slot;
};

int run_extract(const Global& g, const ExtractArgs& a) {
  Resolved r = load_base(g.config_path);
  put_opt(r, "pairs", a.pairs);
  put_opt(r, "encoder", a.encoder);
  put_opt(r, "vocab", a.vocab);
  put_opt(r, "out", a.out);
  put_opt(r, "k_slot", a.k_slot);
  apply_sets(r, g.sets);
  for (const auto& [k, v] : r.cfg.items()) {
    if (k != "pairs" && k != "encoder" && k != "vocab" && k != "out" && k != "k_slot") {
      throw ConfigError("unknown setting '" + k + "' for extract");
    }
  }
  const auto params = load_encoder(r.require_path("encoder"));
  const auto vocab = load_vocab_for(r, params);
  const auto corpus = load_pair_corpus(r.require_path("pairs"));
  const int k_slot = r.cfg.value("k_slot", corpus.k_slot);
  const auto out = r.require_path("out");
  if (g.dry_run) {
    print_plan("extract", r, {{"concept", corpus.concept_name}, {"pairs", corpus.pairs.size()},
                              {"k_slot", k_slot}, {"outputs", {out.string()}}});
    return 0;
  }
  const auto cv = extract_concept(params, vocab, corpus, k_slot);
  save_concept(cv, out, r.cfg);
  std::cout << "concept '" << cv.concept_name << "': " << cv.n_used << " pairs, k_slot " << cv.k_slot
            << ", norm " << cv.norm << " -> " << out.string() << "\n";
  return 0;
}

struct ForgeArgs {
  std::optional<std::string> target, concept_path, encoder, vocab, out, optimizer;
  std::optional<int> k, population, generations, elite_count, tournament_size, steps, project_every;
  std::optional<double> eta, mutation_rate, crossover_rate, step_size;
  std::optional<std::uint64_t> seed;
};

void put_forge_knobs(Resolved& r, const ForgeArgs& a) {
  put_opt(r, "k", a.k);
  put_opt(r, "eta", a.eta);
  put_opt(r, "optimizer", a.optimizer);
  put_opt(r, "seed", a.seed);
  auto nested = [&](const char* group, const char* key, const auto& v) {
    if (v) r.cfg[group][key] = *v;
  };
  nested("ga", "population", a.population);
  nested("ga", "generations", a.generations);
  nested("ga", "mutation_rate", a.mutation_rate);
  nested("ga", "crossover_rate", a.crossover_rate);
  nested("ga", "elite_count", a.elite_count);
  nested("ga", "tournament_size", a.tournament_size);
  nested("projection", "steps", a.steps);
  nested("projection", "step_size", a.step_size);
  nested("projection", "project_every", a.project_every);
}

struct Inputs {
  EncoderParams params;
  Vocabulary vocab;
  ConceptVector cv;
};

Inputs load_inputs(const Resolved& r) {
  auto params = load_encoder(r.require_path("encoder"));
  auto vocab = load_vocab_for(r, params);
  auto cv = load_concept(r.require_path("concept"), params);
  return Inputs{std::move(params), std::move(vocab), std::move(cv)};
}

int run_forge(const Global& g, const ForgeArgs& a) {
  Resolved r = load_base(g.config_path);
  put_opt(r, "target", a.target);
  put_opt(r, "concept", a.concept_path);
  put_opt(r, "encoder", a.encoder);
  put_opt(r, "vocab", a.vocab);
  put_opt(r, "out", a.out);
  put_forge_knobs(r, a);
  apply_sets(r, g.sets);
  const auto cfg = forge_config_from_json(forge_fields(r.cfg, {"target", "concept", "encoder", "vocab", "out"}));
  if (!r.cfg.contains("target")) throw ConfigError("missing required setting 'target'");
  const TextPrompt target(r.cfg.at("target").get<std::string>());
  const auto in = load_inputs(r);
  cfg.validate(in.params.context_length());
  const auto out = r.path("out");
  if (g.dry_run) {
    json outputs = json::array();
    if (out) outputs.push_back(out->string());
    print_plan("forge", r, {{"forge_config", cfg}, {"outputs", outputs}});
    return 0;
  }
  const auto target_emb = infuse(in.params, in.vocab, target, in.cv, cfg.eta, cfg.k);
  const auto result = forge(in.params, in.vocab, target_emb, cfg);
  json j = forge_result_to_json(result);
  j["resolved_config"] = r.cfg;
  j["encoder_fingerprint"] = in.params.fingerprint();
  emit_output(out, j.dump(1) + "\n");
  if (out) {
    std::cout << "best fitness " << result.best_fitness << ": " << result.best_text.text() << "\n";
  }
  return 0;
}

struct UnionArgs {
  std::optional<std::string> configs, target, concept_path, encoder, vocab, out;
  std::optional<std::uint64_t> seed;
};

int run_union(const Global& g, const UnionArgs& a) {
  Resolved r = load_base(a.configs ? *a.configs : g.config_path);
  put_opt(r, "target", a.target);
  put_opt(r, "concept", a.concept_path);
  put_opt(r, "encoder", a.encoder);
  put_opt(r, "vocab", a.vocab);
  put_opt(r, "out", a.out);
  put_opt(r, "base_seed", a.seed);
  apply_sets(r, g.sets);
  for (const auto& [k, v] : r.cfg.items()) {
    static const std::set<std::string> known = {"target", "concept", "encoder", "vocab", "out",
                                                "base_seed", "configs"};
    if (!known.contains(k)) throw ConfigError("unknown setting '" + k + "' for union");
  }
  if (!r.cfg.contains("configs") || !r.cfg.at("configs").is_array() || r.cfg.at("configs").empty()) {
    throw ConfigError("union needs a non-empty 'configs' array");
  }
  std::vector<ForgeConfig> configs;
  for (const auto& c : r.cfg.at("configs")) configs.push_back(forge_config_from_json(c));
  if (!r.cfg.contains("target")) throw ConfigError("missing required setting 'target'");
  const TextPrompt target(r.cfg.at("target").get<std::string>());
  const auto base_seed = r.cfg.value("base_seed", std::uint64_t{0});
  const auto in = load_inputs(r);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    try {
      configs[i].validate(in.params.context_length());
    } catch (const ConfigError& e) {
      throw ConfigError("config[" + std::to_string(i) + "]: " + e.what());
    }
  }
  const auto out = r.path("out");
  if (g.dry_run) {
    json seeds = json::array();
    for (std::size_t i = 0; i < configs.size(); ++i) seeds.push_back(base_seed ^ i);
    json outputs = json::array();
    if (out) outputs.push_back(out->string());
    print_plan("union", r, {{"seeds", seeds}, {"outputs", outputs}});
    return 0;
  }
  const auto results = forge_union(in.params, in.vocab, target, in.cv, configs, base_seed);
  json arr = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    json j = forge_result_to_json(results[i]);
    j["config_index"] = i;
    arr.push_back(std::move(j));
  }
  const json doc = {{"resolved_config", r.cfg},
                    {"encoder_fingerprint", in.params.fingerprint()},
                    {"results", arr}};
  emit_output(out, doc.dump(1) + "\n");
  if (out) {
    for (const auto& res : results) {
      std::cout << "k=" << res.config.k << " eta=" << res.config.eta << " fitness " << res.best_fitness
                << ": " << res.best_text.text() << "\n";
    }
  }
  return 0;
}

struct JudgeArgs {
  std::optional<std::string> oracle, prompt_file, encoder, vocab, out;
  std::optional<int> k_slot;
  std::optional<bool> checker;
};

int run_judge(const Global& g, const JudgeArgs& a) {
  Resolved r = load_base(g.config_path);
  put_opt(r, "oracle", a.oracle);
  put_opt(r, "prompt_file", a.prompt_file);
  put_opt(r, "encoder", a.encoder);
  put_opt(r, "vocab", a.vocab);
  put_opt(r, "out", a.out);
  put_opt(r, "k_slot", a.k_slot);
  put_opt(r, "checker", a.checker);
  apply_sets(r, g.sets);
  for (const auto& [k, v] : r.cfg.items()) {
    static const std::set<std::string> known = {"oracle", "prompt_file", "encoder", "vocab", "out",
                                                "k_slot", "checker"};
    if (!known.contains(k)) throw ConfigError("unknown setting '" + k + "' for judge");
  }
  const auto params = load_encoder(r.require_path("encoder"));
  const auto vocab = load_vocab_for(r, params);
  OracleConfig oc = load_oracle(r.require_path("oracle"), vocab);
  if (r.cfg.contains("checker")) oc = oc.with_checker(r.cfg.at("checker").get<bool>());
  oc.validate();
  const auto prompts = load_prompt_lines(r.require_path("prompt_file"));
  std::vector<HardPrompt> hard;
  int k_slot = r.cfg.value("k_slot", 0);
  for (const auto& p : prompts) {
    hard.emplace_back(vocab, tokenize(vocab, p), params.context_length());
    k_slot = std::max(k_slot, hard.back().k());
  }
  if (k_slot > params.context_length() - 2) throw ConfigError("k_slot exceeds the encoder context");
  const auto out = r.path("out");
  if (g.dry_run) {
    json outputs = json::array();
    if (out) outputs.push_back(out->string());
    print_plan("judge", r, {{"prompts", prompts.size()}, {"k_slot", k_slot}, {"outputs", outputs}});
    return 0;
  }
  std::vector<Verdict> verdicts;
  json rows = json::array();
  for (std::size_t i = 0; i < hard.size(); ++i) {
    verdicts.push_back(judge(params, vocab, oc, hard[i], k_slot, std::to_string(i)));
    const auto& v = verdicts.back();
    rows.push_back({{"prompt", prompts[i].text()},
                    {"blocked_by_input_filter", v.blocked_by_input_filter},
                    {"score", v.score},
                    {"success", v.success},
                    {"flagged_by_checker", v.flagged_by_checker}});
  }
  const auto summary = compute_asr(verdicts, AsrMode::single);
  const json doc = {{"resolved_config", r.cfg}, {"k_slot", k_slot}, {"verdicts", rows}, {"summary", to_json(summary)}};
  emit_output(out, doc.dump(1) + "\n");
  if (out) {
    std::cout << summary.n_success << "/" << summary.n_prompts << " prompts succeed (ASR " << summary.asr
              << (oc.checker_enabled ? ", checker on" : "") << ")\n";
  }
  return 0;
}

struct CampaignArgs {
  std::optional<std::string> scenario, out;
};

int run_campaign_cmd(const Global& g, const CampaignArgs& a) {
  const std::string file = a.scenario ? *a.scenario : g.config_path;
  if (file.empty()) throw ConfigError("campaign needs --scenario");
  Resolved r = load_base(file);
  apply_sets(r, g.sets);
  if (!a.out && !g.dry_run) throw ConfigError("campaign needs --out");
  const fs::path out_dir = a.out.value_or("");
  const auto setup = load_campaign(r.cfg, r.file_dir);
  setup.oracle.validate();
  for (std::size_t i = 0; i < setup.plan.configs.size(); ++i) {
    try {
      setup.plan.configs[i].validate(setup.params.context_length());
    } catch (const ConfigError& e) {
      throw ConfigError("configs[" + std::to_string(i) + "]: " + e.what());
    }
  }
  if (g.dry_run) {
    json seeds = json::array();
    for (std::size_t i = 0; i < setup.plan.targets.size(); ++i) seeds.push_back(prompt_seed(setup.plan.base_seed, i));
    print_plan("campaign", r,
               {{"targets", setup.plan.targets.size()},
                {"configs", setup.plan.configs.size()},
                {"seed_bases", seeds},
                {"model_specific", setup.plan.model_specific.has_value()},
                {"outputs", a.out ? json{(out_dir / "report.json").string(), (out_dir / "summary.csv").string()}
                                  : json::array()}});
    return 0;
  }
  const json report = run_campaign(setup.params, setup.vocab, setup.concept_vector, setup.oracle, setup.plan);
  fs::create_directories(out_dir);
  write_campaign(report, out_dir);
  const auto& s = report.at("summary");
  for (const auto& single : s.at("single")) {
    std::cout << "config " << single.at("config_index") << " (k=" << single.at("k") << ", eta=" << single.at("eta")
              << "): ASR " << single.at("without_checker").at("asr") << ", with checker "
              << single.at("with_checker").at("asr") << "\n";
  }
  std::cout << "union: ASR " << s.at("union").at("without_checker").at("asr") << ", with checker "
            << s.at("union").at("with_checker").at("asr") << "\n";
  if (s.at("baseline").contains("without_checker")) {
    std::cout << "random baseline: ASR " << s.at("baseline").at("without_checker").at("asr") << "\n";
  }
  std::cout << "wrote " << (out_dir / "report.json").string() << "\n";
  return 0;
}

struct SimulateArgs {
  std::optional<std::string> scenario, out;
};

int run_simulate(const Global& g, const SimulateArgs& a) {
  const std::string file = a.scenario ? *a.scenario : g.config_path;
  if (file.empty()) throw ConfigError("simulate needs --scenario");
  Resolved r = load_base(file);
  apply_sets(r, g.sets);
  const std::optional<fs::path> out = a.out ? std::optional<fs::path>(*a.out) : std::nullopt;
  if (g.dry_run) {
    json outputs = json::array();
    if (out) outputs.push_back(out->string());
    print_plan("simulate", r, {{"outputs", outputs}});
    return 0;
  }
  json result = sim::run_scenario(r.cfg);
  result["resolved_config"] = r.cfg;
  emit_output(out, result.dump(1) + "\n");
  return 0;
}

int run_verify(const Global& g) {
  if (g.dry_run) {
    std::cout << json{{"subcommand", "verify"}, {"dry_run", true}, {"gradient_instances", 20}, {"kl_instances", 10}}.dump(1)
              << "\n";
    return 0;
  }
  const json res = selfcheck::run_all();
  std::cout << res.dump(1) << "\n";
  return res.at("passed").get<bool>() ? 0 : 1;
}

void report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"level", "error"}, {"event", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cforge: concept-infusion prompt search, judging and simulation"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config_path, "JSON config file; flags override its keys");
  app.add_option("--set", g.sets, "Override a config key, e.g. --set ga.population=50")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_flag("--dry-run", g.dry_run, "Validate and print the resolved plan without running");
  app.add_option("--threads", g.threads, "Worker threads (default: logical processors)");
  app.add_option("--log-level", g.log_level, "debug|info|warn|error|off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  ExtractArgs ea;
  auto* extract = app.add_subcommand("extract", "Compute a concept vector from a pair corpus");
  extract->add_option("--pairs", ea.pairs, "Pair corpus (JSONL)");
  extract->add_option("--encoder", ea.encoder, "Encoder manifest");
  extract->add_option("--vocab", ea.vocab, "Vocabulary JSON");
  extract->add_option("--out", ea.out, "Concept file to write");
  extract->add_option("--k-slot", ea.k_slot, "Slot length (default: corpus header)");

  ForgeArgs fa;
  auto* forge_cmd = app.add_subcommand("forge", "Search for a hard prompt near an infused target");
  forge_cmd->add_option("--target", fa.target, "Target prompt text");
  forge_cmd->add_option("--concept", fa.concept_path, "Concept file");
  forge_cmd->add_option("--encoder", fa.encoder, "Encoder manifest");
  forge_cmd->add_option("--vocab", fa.vocab, "Vocabulary JSON");
  forge_cmd->add_option("--out", fa.out, "Result JSON (default: stdout)");
  forge_cmd->add_option("--k", fa.k, "Prompt length K");
  forge_cmd->add_option("--eta", fa.eta, "Concept strength");
  forge_cmd->add_option("--optimizer", fa.optimizer, "ga|projection")->check(CLI::IsMember({"ga", "projection"}));
  forge_cmd->add_option("--seed", fa.seed, "Random seed");
  forge_cmd->add_option("--population", fa.population);
  forge_cmd->add_option("--generations", fa.generations);
  forge_cmd->add_option("--mutation-rate", fa.mutation_rate);
  forge_cmd->add_option("--crossover-rate", fa.crossover_rate);
  forge_cmd->add_option("--elite-count", fa.elite_count);
  forge_cmd->add_option("--tournament-size", fa.tournament_size);
  forge_cmd->add_option("--steps", fa.steps, "Projection optimizer steps");
  forge_cmd->add_option("--step-size", fa.step_size);
  forge_cmd->add_option("--project-every", fa.project_every);

  UnionArgs ua;
  auto* union_cmd = app.add_subcommand("union", "Forge one target under several configurations");
  union_cmd->add_option("--configs", ua.configs, "JSON file with inputs and a 'configs' array");
  union_cmd->add_option("--target", ua.target);
  union_cmd->add_option("--concept", ua.concept_path);
  union_cmd->add_option("--encoder", ua.encoder);
  union_cmd->add_option("--vocab", ua.vocab);
  union_cmd->add_option("--out", ua.out);
  union_cmd->add_option("--seed", ua.seed, "Base seed; config i uses seed ^ i");

  JudgeArgs ja;
  auto* judge_cmd = app.add_subcommand("judge", "Score prompts against an oracle");
  judge_cmd->add_option("--oracle", ja.oracle, "Oracle JSON");
  judge_cmd->add_option("--prompt-file", ja.prompt_file, "One prompt per line");
  judge_cmd->add_option("--encoder", ja.encoder);
  judge_cmd->add_option("--vocab", ja.vocab);
  judge_cmd->add_option("--out", ja.out);
  judge_cmd->add_option("--k-slot", ja.k_slot);
  judge_cmd->add_option("--checker", ja.checker, "Override the oracle's checker setting (true|false)");

  CampaignArgs ca;
  auto* campaign = app.add_subcommand("campaign", "Forge and judge every target under every config");
  campaign->add_option("--scenario", ca.scenario, "Campaign JSON");
  campaign->add_option("--out", ca.out, "Output directory");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Run a model-specific loss scenario");
  simulate->add_option("--scenario", sa.scenario, "Scenario JSON");
  simulate->add_option("--out", sa.out, "Result JSON (default: stdout)");

  auto* verify = app.add_subcommand("verify", "Run the KL-identity and gradient self-checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage_error", e.what(), 2);
    std::cerr << app.help();
    return 2;
  }

  try {
    static const std::map<std::string, log::Level> levels = {
        {"debug", log::Level::debug}, {"info", log::Level::info}, {"warn", log::Level::warn},
        {"error", log::Level::error}, {"off", log::Level::off}};
    log::set_level(levels.at(g.log_level));
    if (g.threads > 0) set_worker_count(g.threads);
    if (extract->parsed()) return run_extract(g, ea);
    if (forge_cmd->parsed()) return run_forge(g, fa);
    if (union_cmd->parsed()) return run_union(g, ua);
    if (judge_cmd->parsed()) return run_judge(g, ja);
    if (campaign->parsed()) return run_campaign_cmd(g, ca);
    if (simulate->parsed()) return run_simulate(g, sa);
    if (verify->parsed()) return run_verify(g);
  } catch (const ConfigError& e) {
    report_error("config_error", e.what(), 2);
    return 2;
  } catch (const json::exception& e) {
    report_error("config_error", e.what(), 2);
    return 2;
  } catch (const Error& e) {
    report_error("data_error", e.what(), 3);
    return 3;
  } catch (const fs::filesystem_error& e) {
    report_error("data_error", e.what(), 3);
    return 3;
  } catch (const std::exception& e) {
    report_error("internal_error", e.what(), 1);
    return 1;
  }
  return 2;
}

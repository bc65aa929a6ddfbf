#include "cforge/forge.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "cforge/log.hpp"
#include "cforge/parallel.hpp"
#include "cforge/random.hpp"

namespace cforge {

namespace {

using Genome = std::vector<TokenId>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

Genome random_genome(Philox& rng, std::span<const TokenId> searchable, int k) {
  Genome g(static_cast<std::size_t>(k));
  for (auto& t : g) t = searchable[uniform_index(rng, searchable.size())];
  return g;
}

// Lowest fitness first; equal fitness falls back to the lower index.
bool fitter(const std::vector<double>& fit, std::size_t a, std::size_t b) {
  return fit[a] < fit[b] || (fit[a] == fit[b] && a < b);
}

std::size_t argmin(const std::vector<double>& fit) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < fit.size(); ++i) {
    if (fitter(fit, i, best)) best = i;
  }
  return best;
}

void check_target(const EncoderParams& params, const Embedding& target) {
  if (target.rows() != params.context_length() || target.cols() != params.embed_dim()) {
    throw DataError("target embedding shape does not match the encoder");
  }
  if (!all_finite(target)) throw DataError("target embedding contains non-finite values");
}

ForgeResult make_result(const EncoderParams& params, const Vocabulary& v, Genome best, double best_fit,
                        std::vector<double> trace, const ForgeConfig& cfg,
                        const Embedding& target) {
  HardPrompt hp(v, std::move(best), params.context_length());
  TextPrompt text = decode(v, hp);
  return ForgeResult{std::move(hp), std::move(text), best_fit, std::move(trace), cfg,
                     embedding_fingerprint(target)};
}

}  // namespace

std::string to_string(Optimizer o) { return o == Optimizer::ga ? "ga" : "projection"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "ga") return Optimizer::ga;
  if (s == "projection") return Optimizer::projection;
  throw ConfigError("unknown optimizer '" + s + "' (expected ga or projection)");
}

void ForgeConfig::validate(int context_length) const {
  require(k >= 1 && k <= context_length - 2,
          "k=" + std::to_string(k) + " must lie in [1, " + std::to_string(context_length - 2) + "]");
  require(std::isfinite(eta) && eta >= 0.0, "eta must be finite and non-negative");
  if (optimizer == Optimizer::ga) {
    require(ga.population >= 2, "population must be at least 2");
    require(ga.generations >= 1, "generations must be positive");
    require(ga.mutation_rate >= 0.0 && ga.mutation_rate <= 1.0, "mutation_rate must lie in [0, 1]");
    require(ga.crossover_rate >= 0.0 && ga.crossover_rate <= 1.0, "crossover_rate must lie in [0, 1]");
    require(ga.elite_count >= 1 && ga.elite_count <= ga.population,
            "elite_count must lie in [1, population]");
    require(ga.tournament_size >= 2, "tournament_size must be at least 2");
  } else {
    require(projection.steps >= 1, "steps must be positive");
    require(std::isfinite(projection.step_size) && projection.step_size >= 0.0,
            "step_size must be finite and non-negative");
    require(projection.project_every >= 1, "project_every must be positive");
  }
}

std::string embedding_fingerprint(const Embedding& e) {
  std::string bytes(reinterpret_cast<const char*>(e.data()),
                    static_cast<std::size_t>(e.size()) * sizeof(double));
  return sha256_hex(bytes);
}

Embedding infuse(const EncoderParams& params, const Vocabulary& v, const TextPrompt& target,
                 const ConceptVector& cv, double eta, int k_slot) {
  if (cv.encoder_fingerprint != params.fingerprint()) {
    throw FingerprintMismatch("concept '" + cv.concept_name + "' was extracted with another encoder");
  }
  if (cv.data.rows() != params.context_length() || cv.data.cols() != params.embed_dim()) {
    throw DataError("concept shape does not match the encoder");
  }
  return encode(params, v, tokenize_for_slot(v, target, k_slot), k_slot) + eta * cv.data;
}

double fitness(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> candidate,
               const Embedding& target_emb, int k_slot) {
  thread_local Embedding scratch;
  encode_into(params, v, candidate, k_slot, scratch);
  return squared_distance(scratch, target_emb);
}

ForgeResult forge_ga(const EncoderParams& params, const Vocabulary& v, const Embedding& target_emb,
                     const ForgeConfig& cfg) {
  require(cfg.optimizer == Optimizer::ga, "forge_ga called with a non-GA config");
  cfg.validate(params.context_length());
  check_target(params, target_emb);
  const GaConfig& ga = cfg.ga;
  const int k = cfg.k;
  const auto pop_size = static_cast<std::size_t>(ga.population);
  const auto searchable = v.searchable();
  const bool crossover_enabled = k > 1;
  if (!crossover_enabled) log::info("crossover_disabled", {{"reason", "k == 1"}});

  Philox rng(cfg.seed);
  std::vector<Genome> pop(pop_size);
  for (auto& g : pop) g = random_genome(rng, searchable, k);
  std::vector<double> fit(pop_size);
  std::vector<char> known(pop_size, 0);

  auto tournament = [&]() {
    std::size_t winner = uniform_index(rng, pop_size);
    for (int t = 1; t < ga.tournament_size; ++t) {
      const std::size_t c = uniform_index(rng, pop_size);
      if (fitter(fit, c, winner)) winner = c;
    }
    return winner;
  };

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(ga.generations));
  Genome best_ever;
  double best_ever_fit = 0.0;
  std::vector<std::size_t> order(pop_size);
  std::vector<Genome> next;
  std::vector<double> next_fit;
  std::vector<char> next_known;

  for (int gen = 0; gen < ga.generations; ++gen) {
    parallel_for(pop_size, [&](std::size_t i) {
      if (!known[i]) fit[i] = fitness(params, v, pop[i], target_emb, k);
    });
    std::fill(known.begin(), known.end(), 1);
    const std::size_t best = argmin(fit);
    if (best_ever.empty() || fit[best] < best_ever_fit) {
      best_ever = pop[best];
      best_ever_fit = fit[best];
    }
    trace.push_back(fit[best]);
    if (gen + 1 == ga.generations) break;

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fitter(fit, a, b); });

    next.clear();
    next_fit.clear();
    next_known.clear();
    for (int e = 0; e < ga.elite_count; ++e) {
      next.push_back(pop[order[static_cast<std::size_t>(e)]]);
      next_fit.push_back(fit[order[static_cast<std::size_t>(e)]]);
      next_known.push_back(1);
    }
    while (next.size() < pop_size) {
      Genome a = pop[tournament()];
      Genome b = pop[tournament()];
      if (crossover_enabled && bernoulli(rng, ga.crossover_rate)) {
        const auto point = static_cast<std::size_t>(1 + uniform_index(rng, static_cast<std::uint64_t>(k - 1)));
        std::swap_ranges(a.begin() + static_cast<std::ptrdiff_t>(point), a.end(),
                         b.begin() + static_cast<std::ptrdiff_t>(point));
      }
      for (Genome* child : {&a, &b}) {
        if (next.size() == pop_size) break;
        if (bernoulli(rng, ga.mutation_rate)) {
          const auto pos = uniform_index(rng, static_cast<std::uint64_t>(k));
          (*child)[pos] = searchable[uniform_index(rng, searchable.size())];
        }
        next.push_back(std::move(*child));
        next_fit.push_back(0.0);
        next_known.push_back(0);
      }
    }
    pop.swap(next);
    fit.swap(next_fit);
    known.swap(next_known);
  }

  // Recompute through the public objective so the reported value is exactly fitness(best).
  const double reported = fitness(params, v, best_ever, target_emb, k);
  if (std::adjacent_find(trace.begin(), trace.end(), std::less<>()) != trace.end() ||
      reported != trace.back()) {
    throw std::logic_error("GA post-condition violated: trace not monotone or best != last entry");
  }
  return make_result(params, v, std::move(best_ever), reported, std::move(trace), cfg, target_emb);
}

TokenId nearest_searchable_token(const EncoderParams& params, const Vocabulary& v,
                                 const Eigen::Ref<const Vec>& query) {
  const auto& table = params.token_table();
  TokenId best = -1;
  double best_d = 0.0;
  for (TokenId id : v.searchable()) {
    const double d = (table.row(id).transpose() - query).squaredNorm();
    if (best < 0 || d < best_d) {
      best = id;
      best_d = d;
    }
  }
  return best;
}

ForgeResult forge_projection(const EncoderParams& params, const Vocabulary& v,
                             const Embedding& target_emb, const ForgeConfig& cfg) {
  require(cfg.optimizer == Optimizer::projection, "forge_projection called with a non-projection config");
  if (params.variant() != EncoderVariant::reference) {
    throw ConfigError("projection requires reference encoder");
  }
  cfg.validate(params.context_length());
  check_target(params, target_emb);
  const int k = cfg.k;
  const auto& pc = cfg.projection;

  Philox rng(cfg.seed);
  Genome current = random_genome(rng, v.searchable(), k);
  Genome best = current;
  double best_fit = fitness(params, v, best, target_emb, k);
  std::vector<double> trace{best_fit};

  // Slot rows 1..k are free; BOS/EOS/PAD rows stay at their table values.
  Embedding rows = embed_rows(params, v, current, k);
  const auto& positions = params.positional_table();
  for (int step = 1; step <= pc.steps; ++step) {
    const Embedding g = grad_soft(params, rows, target_emb);
    rows.middleRows(1, k) -= pc.step_size * g.middleRows(1, k);
    if (step % pc.project_every != 0) continue;
    for (int s = 0; s < k; ++s) {
      const Vec token_part = (rows.row(s + 1) - positions.row(s + 1)).transpose();
      current[static_cast<std::size_t>(s)] = nearest_searchable_token(params, v, token_part);
    }
    const double f = fitness(params, v, current, target_emb, k);
    if (f < best_fit) {
      best_fit = f;
      best = current;
    }
    trace.push_back(best_fit);
  }
  return make_result(params, v, std::move(best), best_fit, std::move(trace), cfg, target_emb);
}

ForgeResult forge(const EncoderParams& params, const Vocabulary& v, const Embedding& target_emb,
                  const ForgeConfig& cfg) {
  if (cfg.optimizer == Optimizer::ga) return forge_ga(params, v, target_emb, cfg);
  return forge_projection(params, v, target_emb, cfg);
}

std::vector<ForgeResult> forge_union(const EncoderParams& params, const Vocabulary& v,
                                     const TextPrompt& target, const ConceptVector& cv,
                                     std::span<const ForgeConfig> configs, std::uint64_t base_seed) {
  if (configs.empty()) throw ConfigError("union needs at least one config");
  std::vector<ForgeResult> results;
  results.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    ForgeConfig cfg = configs[i];
    cfg.seed = base_seed ^ static_cast<std::uint64_t>(i);
    const std::string tag = "config[" + std::to_string(i) + "]: ";
    try {
      cfg.validate(params.context_length());
      results.push_back(forge(params, v, infuse(params, v, target, cv, cfg.eta, cfg.k), cfg));
    } catch (const ConfigError& e) {
      throw ConfigError(tag + e.what());
    } catch (const FingerprintMismatch& e) {
      throw FingerprintMismatch(tag + e.what());
    } catch (const DataError& e) {
      throw DataError(tag + e.what());
    }
  }
  return results;
}

// -- JSON --------------------------------------------------------------------

void to_json(json& j, const GaConfig& c) {
  j = {{"population", c.population},       {"generations", c.generations},
       {"mutation_rate", c.mutation_rate}, {"crossover_rate", c.crossover_rate},
       {"elite_count", c.elite_count},     {"tournament_size", c.tournament_size}};
}

void to_json(json& j, const ProjectionConfig& c) {
  j = {{"steps", c.steps}, {"step_size", c.step_size}, {"project_every", c.project_every}};
}

void to_json(json& j, const ForgeConfig& c) {
  j = {{"k", c.k},       {"eta", c.eta}, {"optimizer", to_string(c.optimizer)},
       {"seed", c.seed}, {"ga", c.ga},   {"projection", c.projection}};
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + where);
    }
  }
}

}  // namespace

ForgeConfig forge_config_from_json(const json& j, const ForgeConfig& base) {
  ForgeConfig c = base;
  reject_unknown(j, {"k", "eta", "optimizer", "seed", "ga", "projection"}, "forge config");
  read_field(j, "k", c.k);
  read_field(j, "eta", c.eta);
  read_field(j, "seed", c.seed);
  if (j.contains("optimizer")) {
    std::string s;
    read_field(j, "optimizer", s);
    c.optimizer = parse_optimizer(s);
  }
  if (j.contains("ga")) {
    const auto& g = j.at("ga");
    reject_unknown(g, {"population", "generations", "mutation_rate", "crossover_rate", "elite_count",
                       "tournament_size"},
                   "ga config");
    read_field(g, "population", c.ga.population);
    read_field(g, "generations", c.ga.generations);
    read_field(g, "mutation_rate", c.ga.mutation_rate);
    read_field(g, "crossover_rate", c.ga.crossover_rate);
    read_field(g, "elite_count", c.ga.elite_count);
    read_field(g, "tournament_size", c.ga.tournament_size);
  }
  if (j.contains("projection")) {
    const auto& p = j.at("projection");
    reject_unknown(p, {"steps", "step_size", "project_every"}, "projection config");
    read_field(p, "steps", c.projection.steps);
    read_field(p, "step_size", c.projection.step_size);
    read_field(p, "project_every", c.projection.project_every);
  }
  return c;
}

json forge_result_to_json(const ForgeResult& r) {
  return {{"prompt", r.best_text.text()},
          {"token_ids", std::vector<TokenId>(r.best_prompt.ids().begin(), r.best_prompt.ids().end())},
          {"fitness", r.best_fitness},
          {"trace", r.fitness_trace},
          {"config", r.config},
          {"target_fingerprint", r.target_fingerprint}};
}

}  // namespace cforge

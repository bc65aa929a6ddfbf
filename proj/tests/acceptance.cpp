// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and time limits are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "cforge/concept.hpp"
#include "cforge/eval.hpp"
#include "cforge/forge.hpp"
#include "cforge/io.hpp"
#include "cforge/log.hpp"
#include "cforge/parallel.hpp"
#include "cforge/sim.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace cforge;

namespace {

constexpr double kAlgebraTol = 1e-12;
constexpr double kGradTol = 1e-4;
constexpr double kRecoveryTol = 1e-3;
constexpr int kOracleSeeds = 20;
constexpr int kOracleHits = 19;
constexpr double kMinAsr = 0.5;
constexpr double kBaselineFactor = 10.0;
constexpr double kEtaZeroMargin = 0.10;
constexpr double kAblationGap = 0.20;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail += "; over time limit " + std::to_string(limit_s) + " s";
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-28s %7.2f s  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// -- concept algebra ----------------------------------------------------------

PairCorpus random_corpus(const Vocabulary& v, int n, int k_slot, std::mt19937_64& gen) {
  PairCorpus c{"acc", k_slot, {}};
  while (static_cast<int>(c.pairs.size()) < n) {
    const auto a = decode(v, test::random_ids(v, 1 + static_cast<int>(gen() % k_slot), gen));
    const auto b = decode(v, test::random_ids(v, 1 + static_cast<int>(gen() % k_slot), gen));
    if (a.text() != b.text()) c.pairs.emplace_back(a, b);
  }
  return c;
}

Outcome concept_algebra() {
  const auto v = test::word_vocab(50);
  std::mt19937_64 gen(2024);
  double worst_anti = 0.0, worst_lin = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = test::random_params(53, 12, 8, 0.1 * (trial % 8), 7000 + trial);
    const int na = 1 + static_cast<int>(gen() % 30), nb = 1 + static_cast<int>(gen() % 30);
    const auto a = random_corpus(v, na, 8, gen);
    const auto b = random_corpus(v, nb, 8, gen);
    PairCorpus swapped = a;
    for (auto& pr : swapped.pairs) std::swap(pr.with_concept, pr.without_concept);
    PairCorpus ab = a;
    ab.pairs.insert(ab.pairs.end(), b.pairs.begin(), b.pairs.end());
    const Embedding ca = extract_concept(p, v, a).data;
    const Embedding cb = extract_concept(p, v, b).data;
    worst_anti = std::max(worst_anti, (extract_concept(p, v, swapped).data + ca).cwiseAbs().maxCoeff());
    const Embedding mix = (na * ca + nb * cb) / double(na + nb);
    worst_lin = std::max(worst_lin, (extract_concept(p, v, ab).data - mix).cwiseAbs().maxCoeff());
  }
  return {worst_anti <= kAlgebraTol && worst_lin <= kAlgebraTol,
          fmt("100 corpora, antisymmetry %.2e, averaging %.2e (tol %.0e)", worst_anti, worst_lin, kAlgebraTol)};
}

// -- GA against enumeration ---------------------------------------------------

std::vector<std::vector<double>> ga_traces;

bool monotone(const std::vector<double>& t) {
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[i - 1]) return false;
  }
  return true;
}

Outcome ga_vs_exhaustive() {
  const auto v = test::word_vocab(10);
  int hits = 0;
  for (int seed = 0; seed < kOracleSeeds; ++seed) {
    const int k = 1 + seed % 2;
    const auto p = test::random_params(13, 6, 4, 0.3, 900 + seed);
    // Half the targets are reachable exactly, half are random noise.
    const Embedding target = seed % 4 < 2 ? test::gaussian_matrix(950 + seed, 6, 4)
                                          : encode(p, v, std::vector<TokenId>(k, 3 + seed % 10), k);
    double best = std::numeric_limits<double>::infinity();
    for (TokenId a : v.searchable()) {
      if (k == 1) {
        best = std::min(best, fitness(p, v, std::vector<TokenId>{a}, target, 1));
        continue;
      }
      for (TokenId b : v.searchable()) best = std::min(best, fitness(p, v, std::vector<TokenId>{a, b}, target, 2));
    }
    ForgeConfig cfg;
    cfg.k = k;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.ga = GaConfig{.population = 20, .generations = 40, .mutation_rate = 0.25, .crossover_rate = 0.5,
                      .elite_count = 2, .tournament_size = 3};
    const auto r = forge_ga(p, v, target, cfg);
    ga_traces.push_back(r.fitness_trace);
    if (r.best_fitness == best) ++hits;
  }
  return {hits >= kOracleHits, fmt("%d/%d seeds reach the enumerated optimum (need %d)", hits, kOracleSeeds, kOracleHits)};
}

// -- gradient -----------------------------------------------------------------

Outcome gradient_check() {
  double worst = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    const int L = 7, d = 5;
    const auto p = test::random_params(9, L, d, 0.05 * seed, 4000 + seed);
    const Embedding x = test::gaussian_matrix(4100 + seed, L, d);
    const Embedding target = test::gaussian_matrix(4200 + seed, L, d);
    const Embedding g = grad_soft(p, x, target);
    auto loss = [&](const Embedding& y) { return (encode_soft(p, y) - target).squaredNorm(); };
    const double h = 1e-5;
    Embedding fd(L, d);
    for (int i = 0; i < L; ++i) {
      for (int j = 0; j < d; ++j) {
        Embedding up = x, dn = x;
        up(i, j) += h;
        dn(i, j) -= h;
        fd(i, j) = (loss(up) - loss(dn)) / (2 * h);
      }
    }
    worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff());
  }
  return {worst <= kGradTol, fmt("20 instances, worst relative error %.2e (tol %.0e)", worst, kGradTol)};
}

// -- KL identity --------------------------------------------------------------

Outcome kl_identity() {
  Philox rng(31337);
  Gaussian normal;
  int inside = 0;
  double worst_z = 0.0;
  for (int i = 0; i < 10; ++i) {
    Vec mu1(3), mu2(3);
    for (int j = 0; j < 3; ++j) {
      mu1[j] = normal(rng);
      mu2[j] = normal(rng);
    }
    const double sigma = 0.5 + 0.1 * i;
    const auto k = sim::verify_kl_identity(mu1, mu2, sigma, 100000, 500 + i);
    double want = 0.0;
    for (int j = 0; j < 3; ++j) want += (mu1[j] - mu2[j]) * (mu1[j] - mu2[j]) / (2 * sigma * sigma);
    const double gap = std::abs(k.empirical - want);
    worst_z = std::max(worst_z, gap / k.standard_error);
    if (gap <= std::max(3 * k.standard_error, 1e-12 * want) && std::abs(k.analytic - want) <= 1e-12 * want) ++inside;
  }
  return {inside == 10, fmt("%d/10 instances within 3 SE at n=1e5, worst |z| %.2f", inside, worst_z)};
}

// -- L_white ------------------------------------------------------------------

Outcome l_white_closed_form() {
  using namespace sim;
  const auto sched = DiffusionSchedule<double>::linear_beta(10, 0.05, 0.3);
  double worst = 0.0;
  bool closed_ok = true;
  const ToyPredictor<double> scalar{Mat::Constant(1, 1, 0.8), Mat::Constant(1, 1, 1.0), Vec::Constant(1, 0.1)};
  for (double rho : {0.5, 1.0, 2.0}) {
    for (double c : {-1.0, 0.7, 2.5}) {
      const double ct = 0.3;
      const auto w = l_white(scalar, scalar, Vec::Constant(1, c), Vec::Constant(1, ct), sched, rho, 256, 3);
      const double want = rho * rho * sched.steps() * (c - ct) * (c - ct);
      const double err = std::abs(w.value - want);
      worst = std::max(worst, err);
      closed_ok = closed_ok && err <= std::max(3 * w.standard_error, 1e-12 * want);
    }
  }
  Mat A(2, 2);
  A << 0.9, 0.1, 0.0, 0.8;
  const ToyPredictor<double> theta{A, Mat::Identity(2, 2), (Vec(2) << 0.1, -0.1).finished()};
  ToyPredictor<double> doubled = theta;
  doubled.B *= 2.0;
  const Vec c = (Vec(2) << 1.2, -0.7).finished();
  SearchOptions<double> opts;
  opts.lower = Vec::Constant(2, -1.5);
  opts.upper = Vec::Constant(2, 1.5);
  double rec = 0.0;
  for (Search m : {Search::grid, Search::nelder_mead}) {
    opts.method = m;
    rec = std::max(rec, (optimize_c_tilde(theta, theta, c, sched, 1.0, opts).c_tilde - c).cwiseAbs().maxCoeff());
    rec = std::max(rec,
                   (optimize_c_tilde(theta, doubled, c, sched, 1.0, opts).c_tilde - c / 2).cwiseAbs().maxCoeff());
  }
  return {closed_ok && rec <= kRecoveryTol,
          fmt("closed form worst |diff| %.2e; c and c/2 recovered within %.2e (tol %.0e)", worst, rec,
              kRecoveryTol)};
}

// -- fixture campaign ---------------------------------------------------------

struct CampaignRuns {
  std::optional<CampaignSetup> loaded;
  json first;
  const CampaignSetup& setup() const { return *loaded; }
};

double asr_of(const json& j) { return j.at("asr").get<double>(); }

Outcome attack_efficacy(CampaignRuns& runs) {
  runs.first = run_campaign(runs.setup().params, runs.setup().vocab, runs.setup().concept_vector, runs.setup().oracle,
                            runs.setup().plan);
  const json& s = runs.first.at("summary");
  const double single = asr_of(s.at("single").at(0).at("without_checker"));
  const double uni = asr_of(s.at("union").at("without_checker"));
  const double base = asr_of(s.at("baseline").at("without_checker"));
  bool union_ok = true;
  for (const auto& cfg : s.at("single")) union_ok = union_ok && uni >= asr_of(cfg.at("without_checker"));
  for (const auto& p : runs.first.at("prompts")) {
    for (const auto& r : p.at("results")) ga_traces.push_back(r.at("trace").get<std::vector<double>>());
  }
  const bool pass = single >= kMinAsr && single >= kBaselineFactor * base && base <= 0.05 && union_ok;
  return {pass, fmt("ASR %.3f, baseline %.4f (%.1fx), union %.3f", single, base, base > 0 ? single / base : INFINITY,
                    uni)};
}

Outcome reproducibility(CampaignRuns& runs) {
  const unsigned saved = worker_count();
  set_worker_count(saved > 1 ? 1 : 2);
  const json second = run_campaign(runs.setup().params, runs.setup().vocab, runs.setup().concept_vector,
                                   runs.setup().oracle, runs.setup().plan);
  set_worker_count(saved);
  const std::string a = strip_volatile(runs.first).dump();
  const std::string b = strip_volatile(second).dump();
  return {a == b, fmt("second run on a different thread count: %zu bytes, %s", a.size(),
                      a == b ? "identical" : "DIFFERENT")};
}

Outcome ablation(CampaignRuns& runs) {
  CampaignPlan plan = runs.setup().plan;
  plan.configs.resize(1);
  plan.configs[0].eta = 0.0;
  plan.model_specific.reset();
  const json report =
      run_campaign(runs.setup().params, runs.setup().vocab, runs.setup().concept_vector, runs.setup().oracle, plan);
  for (const auto& p : report.at("prompts")) {
    for (const auto& r : p.at("results")) ga_traces.push_back(r.at("trace").get<std::vector<double>>());
  }
  const json& s = runs.first.at("summary");
  const double tuned = asr_of(s.at("single").at(0).at("without_checker"));
  const double base = asr_of(s.at("baseline").at("without_checker"));
  const double zero = asr_of(report.at("summary").at("single").at(0).at("without_checker"));
  return {zero <= base + kEtaZeroMargin && tuned - zero >= kAblationGap,
          fmt("eta=0 ASR %.3f vs baseline %.4f; tuned eta=%.2f ASR %.3f", zero, base,
              runs.setup().plan.configs[0].eta, tuned)};
}

Outcome monotone_traces() {
  std::size_t bad = 0;
  for (const auto& t : ga_traces) bad += monotone(t) ? 0 : 1;
  return {bad == 0 && !ga_traces.empty(), fmt("%zu GA traces checked, %zu increasing", ga_traces.size(), bad)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path data = argc > 1 ? fs::path(argv[1]) : fs::path(CFORGE_DATA_DIR) / "fixture";
  log::set_level(log::Level::error);

  report("concept-algebra", 10, concept_algebra);
  report("ga-matches-exhaustive", 30, ga_vs_exhaustive);
  report("gradient-check", 0, gradient_check);
  report("kl-identity", 20, kl_identity);
  report("l-white-closed-form", 0, l_white_closed_form);

  CampaignRuns runs;
  report("fixture-attack-efficacy", 300, [&] {
    runs.loaded.emplace(load_campaign(read_json_file(data / "campaign.json"), data));
    return attack_efficacy(runs);
  });
  report("reproducibility", 0, [&] {
    return runs.loaded ? reproducibility(runs) : Outcome{false, "campaign did not load"};
  });
  report("eta-ablation", 0, [&] { return runs.loaded ? ablation(runs) : Outcome{false, "campaign did not load"}; });
  report("monotone-elite-trace", 0, monotone_traces);

  std::printf("%s: %d of 9 criteria failed\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}

#include "cforge/sim.hpp"

#include <set>
#include <string>

namespace cforge::sim {
namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

const json& require(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + " is missing '" + key + "'");
  return j.at(key);
}

Vec to_vec(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Mat to_mat(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ConfigError(what + " must be a list of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vec row = to_vec(j[static_cast<std::size_t>(r)], what);
    if (row.size() != cols) throw ConfigError(what + " has ragged rows");
    m.row(r) = row.transpose();
  }
  return m;
}

json from_vec(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

ToyPredictor<double> parse_predictor(const json& j, const std::string& where) {
  check_keys(j, {"A", "B", "b"}, where);
  ToyPredictor<double> p{to_mat(require(j, "A", where), where + ".A"),
                         to_mat(require(j, "B", where), where + ".B"),
                         to_vec(require(j, "b", where), where + ".b")};
  p.validate();
  return p;
}

DiffusionSchedule<double> parse_schedule(const json& j) {
  check_keys(j, {"alpha_bar", "linear_beta"}, "schedule");
  if (j.contains("alpha_bar") == j.contains("linear_beta")) {
    throw ConfigError("schedule needs exactly one of 'alpha_bar' or 'linear_beta'");
  }
  if (j.contains("alpha_bar")) {
    const Vec a = to_vec(j.at("alpha_bar"), "schedule.alpha_bar");
    DiffusionSchedule<double> s{std::vector<double>(a.data(), a.data() + a.size())};
    s.validate();
    return s;
  }
  const json& lb = j.at("linear_beta");
  check_keys(lb, {"T", "beta_start", "beta_end"}, "schedule.linear_beta");
  return DiffusionSchedule<double>::linear_beta(require(lb, "T", "linear_beta").get<int>(),
                                                require(lb, "beta_start", "linear_beta").get<double>(),
                                                require(lb, "beta_end", "linear_beta").get<double>());
}

json loss_json(const WhiteLoss<double>& w) {
  return {{"value", w.value},
          {"standard_error", w.standard_error},
          {"rho", w.rho},
          {"n_samples", w.n_samples},
          {"per_timestep", w.per_timestep}};
}

}  // namespace

json run_scenario(const json& scenario) {
  check_keys(scenario,
             {"version", "schedule", "theta", "theta_prime", "c", "rho", "n_samples", "seed", "z0",
              "search", "kl"},
             "scenario");
  if (scenario.contains("version") && scenario.at("version") != 1) {
    throw ConfigError("unsupported scenario version");
  }
  try {
    const auto sched = parse_schedule(require(scenario, "schedule", "scenario"));
    const auto theta = parse_predictor(require(scenario, "theta", "scenario"), "theta");
    const auto theta_p = parse_predictor(require(scenario, "theta_prime", "scenario"), "theta_prime");
    const Vec c = to_vec(require(scenario, "c", "scenario"), "c");
    const double rho = scenario.value("rho", 1.0);
    if (!(rho > 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be positive");
    const int n_samples = scenario.value("n_samples", 256);
    if (n_samples < 1) throw ConfigError("n_samples must be positive");
    const auto seed = scenario.value("seed", std::uint64_t{0});

    Z0Sampler<double> z0;
    if (scenario.contains("z0")) {
      const json& zj = scenario.at("z0");
      check_keys(zj, {"mean", "stddev"}, "z0");
      if (zj.contains("mean")) z0.mean = to_vec(zj.at("mean"), "z0.mean");
      z0.stddev = zj.value("stddev", 1.0);
      if (!(z0.stddev >= 0.0)) throw ConfigError("z0.stddev must be non-negative");
    }

    json out;
    out["schedule_steps"] = sched.steps();
    out["rho"] = rho;
    out["n_samples"] = n_samples;
    out["seed"] = seed;
    out["c"] = from_vec(c);
    if (theta.concept_dim() == theta_p.concept_dim()) {
      out["l_white_at_c"] = loss_json(l_white(theta, theta_p, c, c, sched, rho, n_samples, seed, z0));
    }

    if (scenario.contains("search")) {
      const json& sj = scenario.at("search");
      check_keys(sj, {"method", "lower", "upper", "grid_step", "max_iterations", "tolerance"}, "search");
      SearchOptions<double> opts;
      const auto method = sj.value("method", std::string("grid"));
      if (method == "grid") {
        opts.method = Search::grid;
      } else if (method == "nelder_mead") {
        opts.method = Search::nelder_mead;
      } else {
        throw ConfigError("unknown search method '" + method + "'");
      }
      opts.lower = to_vec(require(sj, "lower", "search"), "search.lower");
      opts.upper = to_vec(require(sj, "upper", "search"), "search.upper");
      opts.grid_step = sj.value("grid_step", opts.grid_step);
      opts.max_iterations = sj.value("max_iterations", opts.max_iterations);
      opts.tolerance = sj.value("tolerance", opts.tolerance);
      opts.n_samples = n_samples;
      opts.seed = seed;
      opts.z0 = z0;
      const auto found = optimize_c_tilde(theta, theta_p, c, sched, rho, opts);
      out["search"] = {{"method", method},
                       {"lower", from_vec(opts.lower)},
                       {"upper", from_vec(opts.upper)},
                       {"evaluations", found.evaluations}};
      if (opts.method == Search::grid) out["search"]["grid_step"] = opts.grid_step;
      out["c_tilde"] = from_vec(found.c_tilde);
      out["l_white_at_c_tilde"] =
          loss_json(l_white(theta, theta_p, c, found.c_tilde, sched, rho, n_samples, seed, z0));
    }

    if (scenario.contains("kl")) {
      const json& kj = scenario.at("kl");
      check_keys(kj, {"mu1", "mu2", "sigma", "n_samples", "seed"}, "kl");
      const auto kl = verify_kl_identity(to_vec(require(kj, "mu1", "kl"), "kl.mu1"),
                                         to_vec(require(kj, "mu2", "kl"), "kl.mu2"),
                                         require(kj, "sigma", "kl").get<double>(),
                                         kj.value("n_samples", 100000), kj.value("seed", std::uint64_t{0}));
      out["kl"] = {{"analytic", kl.analytic},
                   {"empirical", kl.empirical},
                   {"standard_error", kl.standard_error}};
    }
    return out;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

}  // namespace cforge::sim

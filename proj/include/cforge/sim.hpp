#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "cforge/error.hpp"
#include "cforge/io.hpp"
#include "cforge/random.hpp"
#include "cforge/types.hpp"

// Desk-scale white-box attack model: affine noise predictors, forward
// diffusion, the trajectory-matching loss and its single-timestep special case.
namespace cforge::sim {

/// Cumulative signal rates alpha_bar_t for t = 1..T, stored at index t-1.
template <typename Scalar>
struct DiffusionSchedule {
  std::vector<Scalar> alpha_bar;

  int steps() const { return static_cast<int>(alpha_bar.size()); }

  Scalar alpha(int t) const {
    if (t < 1 || t > steps()) {
      throw DataError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
    return alpha_bar[static_cast<std::size_t>(t - 1)];
  }

  void validate() const {
    if (alpha_bar.empty()) throw DataError("schedule has no steps");
    Scalar prev = Scalar(1);
    for (Scalar a : alpha_bar) {
      if (!(a > Scalar(0) && a <= prev)) {
        throw DataError("alpha_bar must be non-increasing within (0, 1]");
      }
      prev = a;
    }
  }

  /// DDPM linear beta schedule: alpha_bar_t = prod_{s<=t} (1 - beta_s).
  static DiffusionSchedule linear_beta(int T, Scalar beta_start, Scalar beta_end) {
    if (T < 1) throw DataError("schedule needs T >= 1");
    DiffusionSchedule s;
    s.alpha_bar.reserve(static_cast<std::size_t>(T));
    Scalar running = Scalar(1);
    for (int t = 0; t < T; ++t) {
      const Scalar frac = T == 1 ? Scalar(0) : Scalar(t) / Scalar(T - 1);
      running *= Scalar(1) - (beta_start + frac * (beta_end - beta_start));
      s.alpha_bar.push_back(running);
    }
    s.validate();
    return s;
  }
};

/// eps(z, c, t) = A z + B c + b * t / T.
template <typename Scalar>
struct ToyPredictor {
  Matrix<Scalar> A;
  Matrix<Scalar> B;
  Vector<Scalar> b;

  int latent_dim() const { return static_cast<int>(A.rows()); }
  int concept_dim() const { return static_cast<int>(B.cols()); }

  void validate() const {
    if (A.rows() != A.cols() || B.rows() != A.rows() || b.size() != A.rows() || A.rows() == 0) {
      throw DataError("predictor needs A (m x m), B (m x p), b (m)");
    }
    if (!all_finite(A) || !all_finite(B) || !all_finite(b)) {
      throw DataError("predictor has non-finite entries");
    }
  }

  template <typename DZ, typename DC>
  Vector<Scalar> predict(const Eigen::MatrixBase<DZ>& z, const Eigen::MatrixBase<DC>& c, int t,
                         int T) const {
    return A * z + B * c + b * (Scalar(t) / Scalar(T));
  }
};

template <typename Scalar, typename DZ, typename DN>
Vector<Scalar> forward_noise(const DiffusionSchedule<Scalar>& sched, const Eigen::MatrixBase<DZ>& z0,
                             int t, const Eigen::MatrixBase<DN>& noise) {
  const Scalar a = sched.alpha(t);
  if (z0.size() != noise.size()) throw DataError("z0 and noise differ in length");
  return std::sqrt(a) * z0 + std::sqrt(Scalar(1) - a) * noise;
}

/// Isotropic Gaussian over clean latents.
template <typename Scalar>
struct Z0Sampler {
  Vector<Scalar> mean;
  Scalar stddev = Scalar(1);
};

/// z_t samples for every timestep; entry t-1 is an (n_samples x m) matrix.
/// Timestep t draws from its own Philox stream, so the grid is independent of
/// evaluation order.
template <typename Scalar>
struct SampleGrid {
  std::vector<RowMatrix<Scalar>> z;
  int n_samples() const { return z.empty() ? 0 : static_cast<int>(z.front().rows()); }
};

template <typename Scalar>
SampleGrid<Scalar> sample_forward_grid(const DiffusionSchedule<Scalar>& sched, int latent_dim,
                                       int n_samples, std::uint64_t seed,
                                       const Z0Sampler<Scalar>& z0 = {}) {
  if (n_samples < 1) throw DataError("n_samples must be positive");
  if (z0.mean.size() != 0 && z0.mean.size() != latent_dim) throw DataError("z0 mean has wrong length");
  sched.validate();
  SampleGrid<Scalar> grid;
  grid.z.resize(static_cast<std::size_t>(sched.steps()));
  Vector<Scalar> clean(latent_dim), noise(latent_dim);
  for (int t = 1; t <= sched.steps(); ++t) {
    Philox rng(seed, static_cast<std::uint64_t>(t));
    Gaussian normal;
    auto& block = grid.z[static_cast<std::size_t>(t - 1)];
    block.resize(n_samples, latent_dim);
    for (int s = 0; s < n_samples; ++s) {
      for (int i = 0; i < latent_dim; ++i) clean[i] = z0.stddev * Scalar(normal(rng));
      if (z0.mean.size() != 0) clean += z0.mean;
      for (int i = 0; i < latent_dim; ++i) noise[i] = Scalar(normal(rng));
      block.row(s) = forward_noise(sched, clean, t, noise).transpose();
    }
  }
  return grid;
}

template <typename Scalar>
struct WhiteLoss {
  Scalar rho = Scalar(1);
  int n_samples = 0;
  Scalar value = Scalar(0);
  Scalar standard_error = Scalar(0);
  std::vector<Scalar> per_timestep;  // Monte-Carlo mean of each timestep's term
};

namespace detail {
template <typename Scalar>
void check_pair(const ToyPredictor<Scalar>& theta, const ToyPredictor<Scalar>& theta_p,
                Eigen::Index c_len, Eigen::Index c_tilde_len) {
  theta.validate();
  theta_p.validate();
  if (theta.latent_dim() != theta_p.latent_dim()) throw DataError("predictors differ in latent dim");
  if (c_len != theta.concept_dim() || c_tilde_len != theta_p.concept_dim()) {
    throw DataError("concept length does not match predictor");
  }
}
}  // namespace detail

/// Squared gap between the two predictors at one point; rho = 1.
template <typename Scalar, typename DS, typename DH, typename DZ>
Scalar l_p4d(const ToyPredictor<Scalar>& theta, const ToyPredictor<Scalar>& theta_p,
             const Eigen::MatrixBase<DS>& soft_c, const Eigen::MatrixBase<DH>& hard_c,
             const Eigen::MatrixBase<DZ>& z_t, int t, int T) {
  detail::check_pair(theta, theta_p, soft_c.size(), hard_c.size());
  if (z_t.size() != theta.latent_dim()) throw DataError("z_t has wrong length");
  return (theta.predict(z_t, soft_c, t, T) - theta_p.predict(z_t, hard_c, t, T)).squaredNorm();
}

/// Sum over timesteps of E ||rho (eps_theta(z, c, t) - eps_theta'(z, c~, t))||^2,
/// each expectation estimated on the supplied sample grid.
template <typename Scalar, typename DC, typename DT>
WhiteLoss<Scalar> l_white_on_grid(const ToyPredictor<Scalar>& theta,
                                  const ToyPredictor<Scalar>& theta_p,
                                  const Eigen::MatrixBase<DC>& c,
                                  const Eigen::MatrixBase<DT>& c_tilde,
                                  const DiffusionSchedule<Scalar>& sched,
                                  const SampleGrid<Scalar>& grid, Scalar rho) {
  detail::check_pair(theta, theta_p, c.size(), c_tilde.size());
  if (static_cast<int>(grid.z.size()) != sched.steps()) throw DataError("grid does not match schedule");
  const int T = sched.steps();
  const int n = grid.n_samples();
  WhiteLoss<Scalar> out;
  out.rho = rho;
  out.n_samples = n;
  out.per_timestep.resize(static_cast<std::size_t>(T));
  Scalar variance_sum = Scalar(0);
  std::vector<Scalar> terms(static_cast<std::size_t>(n));
  for (int t = 1; t <= T; ++t) {
    const auto& block = grid.z[static_cast<std::size_t>(t - 1)];
    if (block.cols() != theta.latent_dim()) throw DataError("grid latent dim mismatch");
    // The concept and time contributions do not depend on the sample.
    const Vector<Scalar> offset =
        theta.B * c - theta_p.B * c_tilde + (theta.b - theta_p.b) * (Scalar(t) / Scalar(T));
    const Matrix<Scalar> dA = theta.A - theta_p.A;
    Scalar sum = Scalar(0);
    for (int s = 0; s < n; ++s) {
      const Vector<Scalar> gap = rho * (dA * block.row(s).transpose() + offset);
      terms[static_cast<std::size_t>(s)] = gap.squaredNorm();
      sum += terms[static_cast<std::size_t>(s)];
    }
    const Scalar mean = sum / Scalar(n);
    out.per_timestep[static_cast<std::size_t>(t - 1)] = mean;
    out.value += mean;
    if (n > 1) {
      Scalar ss = Scalar(0);
      for (Scalar x : terms) ss += (x - mean) * (x - mean);
      variance_sum += ss / Scalar(n - 1) / Scalar(n);
    }
  }
  out.standard_error = std::sqrt(variance_sum);
  return out;
}

template <typename Scalar, typename DC, typename DT>
WhiteLoss<Scalar> l_white(const ToyPredictor<Scalar>& theta, const ToyPredictor<Scalar>& theta_p,
                          const Eigen::MatrixBase<DC>& c, const Eigen::MatrixBase<DT>& c_tilde,
                          const DiffusionSchedule<Scalar>& sched, Scalar rho, int n_samples,
                          std::uint64_t seed, const Z0Sampler<Scalar>& z0 = {}) {
  detail::check_pair(theta, theta_p, c.size(), c_tilde.size());
  const auto grid = sample_forward_grid(sched, theta.latent_dim(), n_samples, seed, z0);
  return l_white_on_grid(theta, theta_p, c, c_tilde, sched, grid, rho);
}

enum class Search { grid, nelder_mead };

template <typename Scalar>
struct SearchOptions {
  Search method = Search::grid;
  Vector<Scalar> lower;
  Vector<Scalar> upper;
  Scalar grid_step = Scalar(1e-2);  // lattice spacing, anchored at the origin
  int n_samples = 64;
  std::uint64_t seed = 0;
  int max_iterations = 5000;
  Scalar tolerance = Scalar(1e-14);
  Z0Sampler<Scalar> z0 = {};
};

template <typename Scalar>
struct CTildeResult {
  Vector<Scalar> c_tilde;
  Scalar value = Scalar(0);
  std::size_t evaluations = 0;
};

namespace detail {

template <typename Scalar, typename Objective>
CTildeResult<Scalar> grid_search(const Vector<Scalar>& lo, const Vector<Scalar>& hi, Scalar h,
                                 Objective&& f) {
  if (!(h > Scalar(0)) || !std::isfinite(h)) throw DataError("grid_step must be positive");
  const auto p = lo.size();
  std::vector<long long> first(static_cast<std::size_t>(p)), last(static_cast<std::size_t>(p));
  double total = 1.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    first[i] = static_cast<long long>(std::ceil(lo[i] / h));
    last[i] = static_cast<long long>(std::floor(hi[i] / h));
    if (last[i] < first[i]) throw DataError("bounds contain no grid point in dimension " + std::to_string(i));
    total *= static_cast<double>(last[i] - first[i] + 1);
  }
  if (total > 5e7) throw ConfigError("grid has too many points; raise grid_step or use nelder_mead");
  std::vector<long long> idx = first;
  CTildeResult<Scalar> best;
  Vector<Scalar> x(p);
  while (true) {
    for (Eigen::Index i = 0; i < p; ++i) x[i] = Scalar(idx[i]) * h;
    const Scalar v = f(x);
    ++best.evaluations;
    if (best.evaluations == 1 || v < best.value) {
      best.value = v;
      best.c_tilde = x;
    }
    Eigen::Index d = 0;
    for (; d < p; ++d) {
      if (++idx[d] <= last[d]) break;
      idx[d] = first[d];
    }
    if (d == p) break;
  }
  return best;
}

template <typename Scalar, typename Objective>
CTildeResult<Scalar> nelder_mead(const Vector<Scalar>& lo, const Vector<Scalar>& hi, int max_iter,
                                 Scalar tol, Objective&& f) {
  const auto p = lo.size();
  const auto n_vertices = static_cast<std::size_t>(p + 1);
  auto clamp = [&](Vector<Scalar> x) {
    return Vector<Scalar>(x.cwiseMax(lo).cwiseMin(hi));
  };
  CTildeResult<Scalar> out;
  auto eval = [&](const Vector<Scalar>& x) {
    ++out.evaluations;
    return f(x);
  };
  std::vector<Vector<Scalar>> xs(n_vertices);
  std::vector<Scalar> fs(n_vertices);
  xs[0] = (lo + hi) / Scalar(2);
  for (Eigen::Index i = 0; i < p; ++i) {
    xs[static_cast<std::size_t>(i + 1)] = xs[0];
    xs[static_cast<std::size_t>(i + 1)][i] += (hi[i] - lo[i]) / Scalar(4);
  }
  for (std::size_t i = 0; i < n_vertices; ++i) fs[i] = eval(xs[i]);
  std::vector<std::size_t> order(n_vertices);
  for (int iter = 0; iter < max_iter; ++iter) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fs[a] < fs[b] || (fs[a] == fs[b] && a < b); });
    const std::size_t best = order.front(), worst = order.back(), second = order[n_vertices - 2];
    Scalar extent = Scalar(0);
    for (std::size_t i = 0; i < n_vertices; ++i) {
      extent = std::max(extent, (xs[i] - xs[best]).template lpNorm<Eigen::Infinity>());
    }
    if (std::abs(fs[worst] - fs[best]) <= tol * (std::abs(fs[best]) + tol) && extent <= Scalar(1e-10)) {
      break;
    }
    Vector<Scalar> centroid = Vector<Scalar>::Zero(p);
    for (std::size_t i = 0; i < n_vertices; ++i) {
      if (i != worst) centroid += xs[i];
    }
    centroid /= Scalar(p);
    const Vector<Scalar> xr = clamp(centroid + (centroid - xs[worst]));
    const Scalar fr = eval(xr);
    if (fr < fs[best]) {
      const Vector<Scalar> xe = clamp(centroid + Scalar(2) * (centroid - xs[worst]));
      const Scalar fe = eval(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
      continue;
    }
    if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
      continue;
    }
    const bool outside = fr < fs[worst];
    const Vector<Scalar> xc = outside ? Vector<Scalar>(centroid + Scalar(0.5) * (xr - centroid))
                                      : Vector<Scalar>(centroid + Scalar(0.5) * (xs[worst] - centroid));
    const Scalar fc = eval(xc);
    if (fc < (outside ? fr : fs[worst])) {
      xs[worst] = xc;
      fs[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < n_vertices; ++i) {
      if (i == best) continue;
      xs[i] = xs[best] + Scalar(0.5) * (xs[i] - xs[best]);
      fs[i] = eval(xs[i]);
    }
  }
  const auto it = std::min_element(fs.begin(), fs.end());
  out.c_tilde = xs[static_cast<std::size_t>(it - fs.begin())];
  out.value = *it;
  return out;
}

}  // namespace detail

/// argmin over c~ of l_white, with every candidate scored on one shared sample
/// grid so the objective is a deterministic function of c~.
template <typename Scalar, typename DC>
CTildeResult<Scalar> optimize_c_tilde(const ToyPredictor<Scalar>& theta,
                                      const ToyPredictor<Scalar>& theta_p,
                                      const Eigen::MatrixBase<DC>& c,
                                      const DiffusionSchedule<Scalar>& sched, Scalar rho,
                                      const SearchOptions<Scalar>& opts) {
  const auto p = theta_p.concept_dim();
  detail::check_pair(theta, theta_p, c.size(), p);
  if (p > 4) throw ConfigError("c~ search supports at most 4 concept dimensions");
  if (opts.lower.size() != p || opts.upper.size() != p || !all_finite(opts.lower) ||
      !all_finite(opts.upper) || (opts.lower.array() >= opts.upper.array()).any()) {
    throw DataError("degenerate search bounds");
  }
  const auto grid = sample_forward_grid(sched, theta.latent_dim(), opts.n_samples, opts.seed, opts.z0);
  const Vector<Scalar> c_fixed = c;
  auto objective = [&](const Vector<Scalar>& x) {
    return l_white_on_grid(theta, theta_p, c_fixed, x, sched, grid, rho).value;
  };
  if (opts.method == Search::grid) {
    return detail::grid_search<Scalar>(opts.lower, opts.upper, opts.grid_step, objective);
  }
  return detail::nelder_mead<Scalar>(opts.lower, opts.upper, opts.max_iterations, opts.tolerance,
                                     objective);
}

template <typename Scalar>
struct KlCheck {
  Scalar analytic = Scalar(0);
  Scalar empirical = Scalar(0);
  Scalar standard_error = Scalar(0);
};

/// KL(N(mu1, s^2 I) || N(mu2, s^2 I)): closed form ||mu1 - mu2||^2 / (2 s^2)
/// against a Monte-Carlo mean of the log-density ratio under the first law.
template <typename Scalar, typename D1, typename D2>
KlCheck<Scalar> verify_kl_identity(const Eigen::MatrixBase<D1>& mu1, const Eigen::MatrixBase<D2>& mu2,
                                   Scalar sigma, int n_samples, std::uint64_t seed) {
  if (!(sigma > Scalar(0))) throw DataError("sigma must be positive");
  if (mu1.size() != mu2.size()) throw DataError("means differ in length");
  if (n_samples < 2) throw DataError("need at least two samples");
  const Scalar two_var = Scalar(2) * sigma * sigma;
  KlCheck<Scalar> out;
  out.analytic = (mu1 - mu2).squaredNorm() / two_var;
  Philox rng(seed);
  Gaussian normal;
  Vector<Scalar> x(mu1.size());
  Scalar sum = Scalar(0), sum_sq = Scalar(0);
  for (int s = 0; s < n_samples; ++s) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = mu1[i] + sigma * Scalar(normal(rng));
    const Scalar log_ratio = ((x - mu2).squaredNorm() - (x - mu1).squaredNorm()) / two_var;
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  const Scalar n = Scalar(n_samples);
  out.empirical = sum / n;
  const Scalar var = std::max(Scalar(0), (sum_sq - n * out.empirical * out.empirical) / (n - Scalar(1)));
  out.standard_error = std::sqrt(var / n);
  return out;
}

/// Runs a JSON scenario (schedule, two predictors, c, search settings) and
/// returns the losses and the recovered adversarial concept.
json run_scenario(const json& scenario);

}  // namespace cforge::sim

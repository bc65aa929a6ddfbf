#include "cforge/selfcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cforge/encoder.hpp"
#include "cforge/random.hpp"
#include "cforge/sim.hpp"

namespace cforge::selfcheck {

namespace {

RowMatrix<double> random_matrix(Philox& rng, Gaussian& normal, Eigen::Index rows, Eigen::Index cols) {
  RowMatrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

GradientCheck check_gradient(std::uint64_t seed, double step) {
  Philox rng(seed, 3);
  Gaussian normal;
  const int L = 6, d = 4, V = 8;
  const double mix = 0.1 + 0.8 * uniform01(rng);
  const EncoderParams params(EncoderVariant::reference, random_matrix(rng, normal, V, d),
                             random_matrix(rng, normal, L, d), mix);
  Embedding x = random_matrix(rng, normal, L, d);
  const Embedding target = random_matrix(rng, normal, L, d);
  const Embedding analytic = grad_soft(params, x, target);
  auto loss = [&](const Embedding& rows) { return (encode_soft(params, rows) - target).squaredNorm(); };
  Embedding fd(L, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + step;
    const double up = loss(x);
    x.data()[i] = keep - step;
    const double down = loss(x);
    x.data()[i] = keep;
    fd.data()[i] = (up - down) / (2.0 * step);
  }
  const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-300);
  return {seed, (analytic - fd).cwiseAbs().maxCoeff() / scale};
}

KlCheckResult check_kl(std::uint64_t seed, int n_samples) {
  Philox rng(seed, 4);
  Gaussian normal;
  Vec mu1(3), mu2(3);
  for (int i = 0; i < 3; ++i) mu1[i] = normal(rng);
  for (int i = 0; i < 3; ++i) mu2[i] = normal(rng);
  const auto r = sim::verify_kl_identity(mu1, mu2, 0.7, n_samples, seed);
  return {seed, r.analytic, r.empirical, r.standard_error,
          std::abs(r.analytic - r.empirical) <= 3.0 * r.standard_error};
}

json run_all(int gradient_instances, int kl_instances) {
  bool passed = true;
  json grads = json::array();
  double worst = 0.0;
  for (int i = 0; i < gradient_instances; ++i) {
    const auto g = check_gradient(static_cast<std::uint64_t>(i));
    worst = std::max(worst, g.max_relative_error);
    grads.push_back({{"seed", g.seed}, {"max_relative_error", g.max_relative_error}});
  }
  passed = passed && worst <= 1e-4;
  json kls = json::array();
  for (int i = 0; i < kl_instances; ++i) {
    const auto k = check_kl(static_cast<std::uint64_t>(i));
    passed = passed && k.within_3se;
    kls.push_back({{"seed", k.seed},
                   {"analytic", k.analytic},
                   {"empirical", k.empirical},
                   {"standard_error", k.standard_error},
                   {"within_3se", k.within_3se}});
  }
  return {{"passed", passed},
          {"gradient", {{"tolerance", 1e-4}, {"worst", worst}, {"instances", grads}}},
          {"kl", {{"instances", kls}}}};
}

}  // namespace cforge::selfcheck

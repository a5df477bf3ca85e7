#include "vaetk/hypersphere.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "vaetk/errors.hpp"

namespace vaetk {

double log_ball_volume(int n, double radius) {
  if (n < 1) throw ContractError("ball dimension must be >= 1");
  if (!(radius > 0.0)) throw ContractError("ball radius must be positive");
  const double half = 0.5 * n;
  return half * std::log(std::numbers::pi) + n * std::log(radius) - std::lgamma(half + 1.0);
}

double ball_volume(int n, double radius) { return std::exp(log_ball_volume(n, radius)); }

ShellResult shell_ratio(int n, double radius, double epsilon) {
  if (n < 1) throw ContractError("shell dimension must be >= 1");
  if (!(radius > 0.0)) throw ContractError("shell radius must be positive");
  if (!(epsilon > 0.0) || !(epsilon < radius))
    throw ContractError("shell thickness must satisfy 0 < epsilon < R");
  const double q = epsilon / radius;
  ShellResult out{n, radius, epsilon, 0.0, n * q};
  // (1 - q)^n = exp(n log1p(-q)); expm1 keeps precision when the shell is thin.
  out.ratio_exact = -std::expm1(n * std::log1p(-q));
  return out;
}

double RadiusConcentration::fraction_below(double r) const {
  const auto it = std::lower_bound(sorted_radii.begin(), sorted_radii.end(), r);
  return static_cast<double>(it - sorted_radii.begin()) / static_cast<double>(sorted_radii.size());
}

RadiusConcentration radius_concentration_mc(int n, std::size_t num_points, std::uint64_t seed) {
  if (n < 1) throw ContractError("dimension must be >= 1");
  if (num_points < 1000) throw ContractError("radius Monte Carlo needs at least 1000 points");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RadiusConcentration out;
  out.n = n;
  out.num_points = num_points;
  out.sorted_radii.resize(num_points);
  std::vector<double> x(static_cast<std::size_t>(n));
  for (auto& radius : out.sorted_radii) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& v : x) {
        v = gauss(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double scale = std::pow(unit(rng), 1.0 / n) / std::sqrt(norm2);
    double r2 = 0.0;
    for (double v : x) r2 += (v * scale) * (v * scale);
    radius = std::sqrt(r2);
  }
  std::sort(out.sorted_radii.begin(), out.sorted_radii.end());

  const double count = static_cast<double>(num_points);
  double ks = 0.0;
  for (std::size_t i = 0; i < num_points; ++i) {
    const double cdf = std::pow(out.sorted_radii[i], n);
    ks = std::max({ks, std::abs(static_cast<double>(i + 1) / count - cdf),
                   std::abs(cdf - static_cast<double>(i) / count)});
  }
  out.ks_statistic = ks;
  out.dkw_bound = std::sqrt(std::log(2.0 / 0.01) / (2.0 * count));
  out.within_dkw = ks <= out.dkw_bound;

  out.probabilities = {0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99};
  for (double p : out.probabilities) {
    const auto k = static_cast<std::size_t>(std::ceil(p * count)) - 1;
    out.quantiles.push_back(out.sorted_radii[std::min(k, num_points - 1)]);
  }
  return out;
}

std::string shell_sweep_csv(const std::vector<int>& dims, const std::vector<double>& eps_ratios) {
  std::string out = "n,eps_ratio,ratio_exact,ratio_approx\n";
  char buf[128];
  for (int n : dims)
    for (double q : eps_ratios) {
      const auto s = shell_ratio(n, 1.0, q);
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", n, q, s.ratio_exact, s.ratio_approx);
      out += buf;
    }
  return out;
}

std::string radius_quantiles_csv(const RadiusConcentration& rc) {
  std::string out = "n,probability,empirical_radius,exact_radius\n";
  char buf[128];
  for (std::size_t i = 0; i < rc.probabilities.size(); ++i) {
    const double exact = std::pow(rc.probabilities[i], 1.0 / rc.n);
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", rc.n, rc.probabilities[i],
                  rc.quantiles[i], exact);
    out += buf;
  }
  return out;
}

}  // namespace vaetk

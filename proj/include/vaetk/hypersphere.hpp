#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vaetk {

// pi^(n/2) R^n / Gamma(n/2 + 1), evaluated in log space.
double ball_volume(int n, double radius);
double log_ball_volume(int n, double radius);

struct ShellResult {
  int n = 0;
  double radius = 0.0;
  double epsilon = 0.0;
  double ratio_exact = 0.0;   // 1 - (1 - eps/R)^n
  double ratio_approx = 0.0;  // first-order n eps / R
};

// Fraction of the ball's volume within epsilon of its surface.
ShellResult shell_ratio(int n, double radius, double epsilon);

struct RadiusConcentration {
  int n = 0;
  std::size_t num_points = 0;
  std::vector<double> probabilities;
  std::vector<double> quantiles;
  // sup_r |F_empirical(r) - r^n|
  double ks_statistic = 0.0;
  // DKW band sqrt(ln(2 / alpha) / (2 N)) at alpha = 0.01
  double dkw_bound = 0.0;
  bool within_dkw = false;
  std::vector<double> sorted_radii;

  // Empirical fraction of points with radius below r.
  double fraction_below(double r) const;
};

// Uniform points in the unit n-ball (Gaussian direction, U^(1/n) radius).
RadiusConcentration radius_concentration_mc(int n, std::size_t num_points, std::uint64_t seed);

std::string shell_sweep_csv(const std::vector<int>& dims, const std::vector<double>& eps_ratios);
std::string radius_quantiles_csv(const RadiusConcentration& rc);

}  // namespace vaetk

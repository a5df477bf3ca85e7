#include "vaetk/latent_analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vaetk/errors.hpp"

namespace vaetk {

namespace {

constexpr double kRidge = 1e-8;
constexpr double kScoreTol = 1e-8;
constexpr std::size_t kMaxIrls = 100;

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd design_matrix(const Array& latents) {
  const std::size_t n = latents.dim(0), d = latents.dim(1);
  MatrixXd x(n, d + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = latents.at(i, j);
    x(i, d) = 1.0;
  }
  return x;
}

// The ridge only stabilizes the factorization; a few refinement sweeps against
// the unridged system remove its bias whenever the problem is well posed.
VectorXd solve_spd(const MatrixXd& gram, const VectorXd& rhs) {
  MatrixXd ridged = gram;
  ridged.diagonal().array() += kRidge;
  Eigen::LLT<MatrixXd> llt(ridged);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-14))
    throw SingularityError("normal equations are singular beyond ridge rescue");
  VectorXd sol = llt.solve(rhs);
  for (int sweep = 0; sweep < 3; ++sweep) sol += llt.solve(rhs - gram * sol);
  if (!sol.allFinite()) throw SingularityError("normal equations produced non-finite solution");
  return sol;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logistic_deviance(const VectorXd& eta, const VectorXd& y) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    dev += y(i) > 0.5 ? softplus(-eta(i)) : softplus(eta(i));
  return 2.0 * dev;
}

double pearson(const double* x, std::size_t stride, std::span<const double> y, bool& degenerate) {
  const std::size_t n = y.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i * stride];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i * stride] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  degenerate = !(sxx > 0.0) || !(syy > 0.0);
  if (degenerate) return 0.0;
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

void check_inputs(const Array& latents, std::span<const double> targets) {
  if (latents.rank() != 2) throw DimensionError("latents must be [n x d]");
  if (latents.dim(0) != targets.size())
    throw DimensionError("latents have " + std::to_string(latents.dim(0)) + " rows, targets " +
                         std::to_string(targets.size()));
  for (double t : targets)
    if (!std::isfinite(t)) throw ContractError("targets must be finite");
}

}  // namespace

const char* name(Link link) { return link == Link::Identity ? "identity" : "logistic"; }

std::vector<double> GlmFit::predict(const Array& latents) const {
  const std::size_t n = latents.dim(0), d = latents.dim(1);
  if (coefficients.size() != d + 1) throw DimensionError("latent width does not match the fit");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double eta = coefficients[d];
    for (std::size_t j = 0; j < d; ++j) eta += coefficients[j] * latents.at(i, j);
    out[i] = link == Link::Identity ? eta : sigmoid(eta);
  }
  return out;
}

GlmFit fit_glm(const Array& latents, std::span<const double> targets, Link link) {
  check_inputs(latents, targets);
  const std::size_t n = latents.dim(0), d = latents.dim(1);
  if (n <= d + 1)
    throw ContractError("GLM needs n > d + 1 (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");

  const MatrixXd x = design_matrix(latents);
  const VectorXd y = Eigen::Map<const VectorXd>(targets.data(), static_cast<Eigen::Index>(n));
  GlmFit fit;
  fit.link = link;
  VectorXd beta;

  if (link == Link::Identity) {
    beta = solve_spd(x.transpose() * x, x.transpose() * y);
    const VectorXd resid = y - x * beta;
    fit.deviance = resid.squaredNorm();
    const double total = (y.array() - y.mean()).matrix().squaredNorm();
    fit.r_squared = total > 0.0 ? 1.0 - fit.deviance / total : (fit.deviance == 0.0 ? 1.0 : 0.0);
    fit.iterations = 1;
  } else {
    for (double t : targets)
      if (t != 0.0 && t != 1.0) throw ContractError("logistic link requires targets in {0, 1}");
    beta = VectorXd::Zero(static_cast<Eigen::Index>(d + 1));
    VectorXd eta = x * beta;
    double dev = logistic_deviance(eta, y);
    for (fit.iterations = 0; fit.iterations < kMaxIrls; ++fit.iterations) {
      VectorXd p = eta.unaryExpr([](double e) { return sigmoid(e); });
      const VectorXd score = x.transpose() * (y - p);
      if (score.norm() < kScoreTol) break;
      const VectorXd w = (p.array() * (1.0 - p.array())).matrix();
      const MatrixXd hess = x.transpose() * w.asDiagonal() * x;
      const VectorXd step = solve_spd(hess, score);
      // Step halving keeps the deviance monotone when the data separate.
      double t = 1.0;
      VectorXd trial = beta + step;
      VectorXd trial_eta = x * trial;
      double trial_dev = logistic_deviance(trial_eta, y);
      while (!(trial_dev <= dev) && t > 1e-10) {
        t *= 0.5;
        trial = beta + t * step;
        trial_eta = x * trial;
        trial_dev = logistic_deviance(trial_eta, y);
      }
      if (!(trial_dev <= dev)) break;
      beta = std::move(trial);
      eta = std::move(trial_eta);
      dev = trial_dev;
    }
    fit.deviance = dev;
    fit.r_squared = std::nan("");
  }

  fit.coefficients.assign(beta.data(), beta.data() + beta.size());
  fit.per_dim_correlation = latent_target_scatter(latents, targets).r;
  return fit;
}

LatentTargetScatter latent_target_scatter(const Array& latents, std::span<const double> targets) {
  check_inputs(latents, targets);
  const std::size_t n = latents.dim(0), d = latents.dim(1);
  LatentTargetScatter out;
  out.r.resize(d);
  out.degenerate.resize(d);
  out.table_csv = "dim,latent,target\n";
  char buf[96];
  for (std::size_t j = 0; j < d; ++j) {
    bool degenerate = false;
    out.r[j] = pearson(latents.data().data() + j, d, targets, degenerate);
    out.degenerate[j] = degenerate;
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", j, latents.at(i, j), targets[i]);
      out.table_csv += buf;
    }
  }
  return out;
}

std::string glm_csv(const GlmFit& fit) {
  std::string out = "index,r,coefficient\n";
  char buf[96];
  for (std::size_t j = 0; j + 1 < fit.coefficients.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", j, fit.per_dim_correlation[j],
                  fit.coefficients[j]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "summary,%.17g,%.17g\n",
                fit.link == Link::Identity ? fit.r_squared : fit.deviance, fit.intercept());
  return out + buf;
}

}  // namespace vaetk

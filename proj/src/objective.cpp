#include "vaetk/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vaetk/errors.hpp"

namespace vaetk {

using ad::Var;

const char* name(DivergenceKind kind) { return kind == DivergenceKind::KL ? "kl" : "mmd"; }

const char* name(ReconKind kind) {
  switch (kind) {
    case ReconKind::MSE: return "mse";
    case ReconKind::GaussianNLL: return "gaussian_nll";
    case ReconKind::DSSIM: return "dssim";
  }
  return "?";
}

void GaussianLatent::validate() const {
  if (mu.shape() != logvar.shape())
    throw DimensionError("latent mu " + to_string(mu.shape()) + " vs logvar " +
                         to_string(logvar.shape()));
  if (mu.shape().size() != 2)
    throw DimensionError("latent parameters must be [batch x d], got " + to_string(mu.shape()));
  for (double lv : logvar.value().data()) {
    const double var = std::exp(lv);
    if (!(var > 0.0) || !std::isfinite(var))
      throw DomainError("latent variance exp(" + std::to_string(lv) + ") is not finite and positive");
  }
}

void ObjectiveConfig::validate() const {
  if (mc_samples < 1) throw ContractError("mc_samples must be >= 1");
  if (!(lambda >= 0.0)) throw ContractError("lambda must be nonnegative");
  if (mmd_bandwidths.empty()) throw ContractError("at least one MMD bandwidth is required");
  for (double b : mmd_bandwidths)
    if (!(b > 0.0)) throw ContractError("MMD bandwidths must be positive");
  if (ssim_window == 0 || ssim_window % 2 == 0)
    throw ContractError("ssim_window must be odd and positive");
  if (!(dynamic_range > 0.0)) throw ContractError("dynamic_range must be positive");
  if (ssim_c1 < 0.0 || ssim_c2 < 0.0) throw ContractError("SSIM constants must be positive");
}

Var reparameterize(const GaussianLatent& latent, Var eps) {
  if (eps.shape() != latent.mu.shape())
    throw DimensionError("eps " + to_string(eps.shape()) + " does not match mu " +
                         to_string(latent.mu.shape()));
  Var sigma = ad::exp(ad::mul_scalar(latent.logvar, 0.5));
  return latent.mu + sigma * eps;
}

KlResult kl_to_standard_normal(const GaussianLatent& latent) {
  latent.validate();
  // expm1(lv) - lv >= 0 holds after rounding, so every term stays nonnegative.
  Var terms = ad::mul_scalar(
      ad::square(latent.mu) + (ad::expm1(latent.logvar) - latent.logvar), 0.5);
  Var per_sample = ad::sum(terms, 1);
  KlResult out{ad::mean(per_sample), {}};

  const Array& t = terms.value();
  const std::size_t n = t.dim(0), d = t.dim(1);
  out.per_dim.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.per_dim[j] += t.at(i, j);
  for (double& v : out.per_dim) v /= static_cast<double>(n);
  return out;
}

namespace {

// [n, m] matrix of squared Euclidean distances between rows.
Var pairwise_sq_dist(Var a, Var b) {
  const std::size_t m = b.shape()[0];
  Var na = ad::sum(ad::square(a), 1, true);                        // [n, 1]
  Var nb = ad::reshape(ad::sum(ad::square(b), 1), Shape{1, m});   // [1, m]
  Var cross = ad::matmul(a, ad::transpose(b));                      // [n, m]
  return (na + nb) - ad::mul_scalar(cross, 2.0);
}

Var kernel_mean(Var a, Var b, std::span<const double> bandwidths) {
  Var dist = pairwise_sq_dist(a, b);
  Var acc;
  for (double h : bandwidths) {
    Var k = ad::mean(ad::exp(ad::mul_scalar(dist, -1.0 / h)));
    acc = acc.valid() ? acc + k : k;
  }
  return acc;
}

}  // namespace

Var mmd_rbf(Var samples, Var prior_samples, std::span<const double> bandwidths) {
  const Shape& zs = samples.shape();
  const Shape& ps = prior_samples.shape();
  if (zs.size() != 2 || ps.size() != 2)
    throw DimensionError("mmd_rbf expects [n x d] and [m x d] sample matrices");
  if (zs[1] != ps[1])
    throw DimensionError("mmd_rbf: sample dimension " + std::to_string(zs[1]) +
                         " vs prior dimension " + std::to_string(ps[1]));
  if (bandwidths.empty()) throw ContractError("mmd_rbf needs at least one bandwidth");
  for (double h : bandwidths)
    if (!(h > 0.0)) throw ContractError("mmd_rbf bandwidths must be positive");

  Var kzz = kernel_mean(samples, samples, bandwidths);
  Var kpp = kernel_mean(prior_samples, prior_samples, bandwidths);
  Var kzp = kernel_mean(samples, prior_samples, bandwidths);
  // Clip rounding noise below zero; the V-statistic is a squared RKHS norm.
  return ad::relu((kzz + kpp) - ad::mul_scalar(kzp, 2.0));
}

double mmd_rbf_value(const Array& a, const Array& b, std::span<const double> bandwidths) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("mmd_rbf_value expects [n x d] and [m x d] sample matrices");
  if (bandwidths.empty()) throw ContractError("mmd_rbf_value needs at least one bandwidth");
  const std::size_t d = a.dim(1);
  auto kmean = [&](const Array& x, const Array& y) {
    const std::size_t n = x.dim(0), m = y.dim(0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.data().data() + i * d;
      double row = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double* yj = y.data().data() + j * d;
        double dist = 0.0;
        for (std::size_t k = 0; k < d; ++k) dist += (xi[k] - yj[k]) * (xi[k] - yj[k]);
        for (double h : bandwidths) row += std::exp(-dist / h);
      }
      total += row;
    }
    return total / (static_cast<double>(n) * static_cast<double>(m));
  };
  return std::max(0.0, kmean(a, a) + kmean(b, b) - 2.0 * kmean(a, b));
}

std::vector<double> mmd_bandwidths_for(const ObjectiveConfig& cfg, std::size_t latent_dim) {
  std::vector<double> out;
  for (double s : cfg.mmd_bandwidths) out.push_back(s * static_cast<double>(latent_dim));
  return out;
}

Var ssim(Var x, Var y, std::size_t window, double c1, double c2) {
  if (x.shape() != y.shape())
    throw DimensionError("ssim: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  if (window == 0 || window % 2 == 0) throw ContractError("ssim window must be odd");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ContractError("ssim constants must be positive");
  const Shape& s = x.shape();
  Shape planes;
  if (s.size() == 2)
    planes = {1, 1, s[0], s[1]};
  else if (s.size() == 4)
    planes = {s[0] * s[1], 1, s[2], s[3]};
  else
    throw DimensionError("ssim expects [H, W] or [N, C, H, W], got " + to_string(s));
  if (window > planes[2] || window > planes[3])
    throw ContractError("ssim window " + std::to_string(window) + " exceeds image extent " +
                        to_string(s));

  ad::Graph& g = x.graph();
  const double w = 1.0 / static_cast<double>(window * window);
  Var box = g.constant(Array(Shape{1, 1, window, window}, w));
  auto local_mean = [&](Var v) { return ad::conv2d(v, box, 1, 0); };

  Var xi = ad::reshape(x, planes);
  Var yi = ad::reshape(y, planes);
  Var mx = local_mean(xi);
  Var my = local_mean(yi);
  Var mx2 = ad::square(mx);
  Var my2 = ad::square(my);
  Var mxy = mx * my;
  Var sxx = local_mean(ad::square(xi)) - mx2;
  Var syy = local_mean(ad::square(yi)) - my2;
  Var sxy = local_mean(xi * yi) - mxy;

  Var num = (ad::mul_scalar(mxy, 2.0) + c1) * (ad::mul_scalar(sxy, 2.0) + c2);
  Var den = ((mx2 + my2) + c1) * ((sxx + syy) + c2);
  return ad::mean(num / den);
}

Var recon_loss(Var x, Var x_hat, ReconKind kind, const ObjectiveConfig& cfg) {
  if (x.shape() != x_hat.shape())
    throw DimensionError("reconstruction " + to_string(x_hat.shape()) +
                         " does not match input " + to_string(x.shape()));
  switch (kind) {
    case ReconKind::MSE:
      return ad::mean(ad::square(x - x_hat));
    case ReconKind::GaussianNLL: {
      // Decoder variance fixed at 1.
      const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
      return ad::mean(ad::square(x - x_hat)) * 0.5 + log_norm;
    }
    case ReconKind::DSSIM: {
      if (x.shape().size() != 4)
        throw ContractError("DSSIM needs image batches [N, C, H, W], got " +
                            to_string(x.shape()));
      Var s = ssim(x, x_hat, cfg.ssim_window, cfg.c1(), cfg.c2());
      return ad::mul_scalar(s, -1.0) + 1.0;
    }
  }
  throw ContractError("unknown reconstruction kind");
}

Objective assemble_objective(Var x, std::span<const Var> x_hats, const GaussianLatent& latent,
                             std::span<const Var> z_samples, std::span<const Var> prior_samples,
                             const ObjectiveConfig& cfg) {
  cfg.validate();
  if (x_hats.empty()) throw ContractError("assemble_objective needs at least one reconstruction");

  Var recon;
  for (Var xh : x_hats) {
    Var r = recon_loss(x, xh, cfg.recon, cfg);
    recon = recon.valid() ? recon + r : r;
  }
  if (x_hats.size() > 1) recon = ad::mul_scalar(recon, 1.0 / static_cast<double>(x_hats.size()));

  KlResult kl = kl_to_standard_normal(latent);
  Var divergence;
  if (cfg.divergence == DivergenceKind::KL) {
    divergence = kl.total;
  } else {
    if (z_samples.empty() || prior_samples.size() != z_samples.size())
      throw ContractError("MMD objective needs one prior sample set per latent sample set");
    const auto bw = mmd_bandwidths_for(cfg, latent.dim());
    for (std::size_t i = 0; i < z_samples.size(); ++i) {
      Var m = mmd_rbf(z_samples[i], prior_samples[i], bw);
      divergence = divergence.valid() ? divergence + m : m;
    }
    if (z_samples.size() > 1)
      divergence = ad::mul_scalar(divergence, 1.0 / static_cast<double>(z_samples.size()));
  }

  Var total = recon + ad::mul_scalar(divergence, cfg.lambda);
  Objective out{recon, divergence, total, {}};
  out.report.recon = recon.value().item();
  out.report.divergence = divergence.value().item();
  out.report.lambda = cfg.lambda;
  out.report.total = total.value().item();
  out.report.per_dim_kl = std::move(kl.per_dim);
  return out;
}

double auto_lambda(double recon0, double divergence0) {
  return std::clamp(recon0 / std::max(divergence0, 1e-8), 1.0, 1e4);
}

}  // namespace vaetk

#pragma once

// Variational objectives: reparameterized sampling, the analytic Gaussian KL,
// a kernel MMD divergence, reconstruction losses and their assembly into the
// negative ELBO (KL mode) or the InfoVAE objective (MMD mode).

#include <cstddef>
#include <span>
#include <vector>

#include "vaetk/autodiff.hpp"

namespace vaetk {

/// Diagonal Gaussian posterior q(z|x) = N(mu, exp(logvar)), one row per sample.
struct GaussianLatent {
  ad::Var mu;
  ad::Var logvar;

  std::size_t batch() const { return mu.shape()[0]; }
  std::size_t dim() const { return mu.shape()[1]; }
  void validate() const;
};

enum class DivergenceKind { KL, MMD };
enum class ReconKind { MSE, GaussianNLL, DSSIM };

const char* name(DivergenceKind kind);
const char* name(ReconKind kind);

struct ObjectiveConfig {
  DivergenceKind divergence = DivergenceKind::KL;
  double lambda = 1.0;
  // When set, the trainer replaces lambda with auto_lambda() at initialization.
  bool lambda_auto = false;
  ReconKind recon = ReconKind::MSE;
  std::size_t mc_samples = 1;
  // Multiples of the latent dimension; see mmd_bandwidths_for().
  std::vector<double> mmd_bandwidths{0.25, 0.5, 1.0, 2.0, 4.0};
  std::size_t ssim_window = 7;
  double dynamic_range = 1.0;
  // Zero means "derive from dynamic_range": c1 = (0.01 L)^2, c2 = (0.03 L)^2.
  double ssim_c1 = 0.0;
  double ssim_c2 = 0.0;

  double c1() const { return ssim_c1 > 0.0 ? ssim_c1 : 1e-4 * dynamic_range * dynamic_range; }
  double c2() const { return ssim_c2 > 0.0 ? ssim_c2 : 9e-4 * dynamic_range * dynamic_range; }
  void validate() const;
};

/// Per-batch decomposition of the minimized objective.
struct LossReport {
  double recon = 0.0;
  double divergence = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::vector<double> per_dim_kl;
};

struct KlResult {
  ad::Var total;                // sum over dimensions, mean over the batch
  std::vector<double> per_dim;  // batch-mean KL of each latent dimension
};

struct Objective {
  ad::Var recon;
  ad::Var divergence;
  ad::Var total;
  LossReport report;
};

// z = mu + exp(logvar / 2) * eps
ad::Var reparameterize(const GaussianLatent& latent, ad::Var eps);

// KL(N(mu, sigma^2) || N(0, 1)) = 1/2 sum(mu^2 + sigma^2 - log sigma^2 - 1)
KlResult kl_to_standard_normal(const GaussianLatent& latent);

/// Biased (V-statistic) squared MMD between two sample sets under a sum of
/// unit-weight kernels k_h(x, y) = exp(-|x - y|^2 / h), one per bandwidth h.
ad::Var mmd_rbf(ad::Var samples, ad::Var prior_samples, std::span<const double> bandwidths);

// Same statistic without a graph, streaming over sample pairs; for sets too
// large to hold an n x m kernel matrix.
double mmd_rbf_value(const Array& samples, const Array& prior_samples,
                     std::span<const double> bandwidths);

// Absolute bandwidths for a latent of dimension `latent_dim`.
std::vector<double> mmd_bandwidths_for(const ObjectiveConfig& cfg, std::size_t latent_dim);

// Mean SSIM over all valid uniform windows. Accepts [H, W] or [N, C, H, W].
ad::Var ssim(ad::Var x, ad::Var y, std::size_t window, double c1, double c2);

ad::Var recon_loss(ad::Var x, ad::Var x_hat, ReconKind kind, const ObjectiveConfig& cfg);

// One reconstruction and one latent sample per Monte Carlo draw. Prior samples
// are required (one set per draw) in MMD mode and ignored in KL mode.
Objective assemble_objective(ad::Var x, std::span<const ad::Var> x_hats,
                             const GaussianLatent& latent,
                             std::span<const ad::Var> z_samples,
                             std::span<const ad::Var> prior_samples,
                             const ObjectiveConfig& cfg);

// Lambda that puts lambda * divergence on the order of the reconstruction
// term at initialization, clamped to [1, 1e4].
double auto_lambda(double recon0, double divergence0);

}  // namespace vaetk

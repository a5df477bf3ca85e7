#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vaetk/array.hpp"

namespace vaetk {

enum class Link { Identity, Logistic };

const char* name(Link link);

struct GlmFit {
  Link link = Link::Identity;
  std::vector<double> coefficients;  // d slopes followed by the intercept
  double r_squared = 0.0;            // identity link only
  double deviance = 0.0;             // residual sum of squares (identity) or -2 log-likelihood
  std::vector<double> per_dim_correlation;
  std::size_t iterations = 0;

  double intercept() const { return coefficients.back(); }
  // Linear predictor for each row of `latents`, passed through the link's mean function.
  std::vector<double> predict(const Array& latents) const;
};

// Identity: least squares through ridge-stabilized (1e-8) normal equations.
// Logistic: iteratively reweighted least squares until the score norm drops
// below 1e-8 or 100 iterations. latents is [n x d] with n > d + 1.
GlmFit fit_glm(const Array& latents, std::span<const double> targets, Link link);

struct LatentTargetScatter {
  std::vector<double> r;         // Pearson r per latent dimension
  std::vector<bool> degenerate;  // zero-variance dimension (r reported as 0)
  std::string table_csv;         // long-form "dim,latent,target" rows for plotting
};

LatentTargetScatter latent_target_scatter(const Array& latents, std::span<const double> targets);

// One row per latent dimension (index, r, coefficient) followed by a summary
// row "summary,<r_squared or deviance>,<intercept>".
std::string glm_csv(const GlmFit& fit);

}  // namespace vaetk

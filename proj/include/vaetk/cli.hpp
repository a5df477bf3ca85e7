#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "vaetk/networks.hpp"
#include "vaetk/trainer.hpp"

namespace vaetk::cli {

/// Parsed training run description.
///
/// Plain-text format: "[section]" headers followed by "key = value" lines;
/// '#' starts a comment. Sections and keys:
///   [data]      path
///   [model]     kind (mlp|conv2d), latent_dim, hidden, conv_channels, kernel, stride
///   [objective] divergence (kl|mmd), lambda (number|auto), recon (mse|gaussian_nll|dssim),
///               mc_samples, mmd_bandwidths, ssim_window, ssim_c1, ssim_c2, dynamic_range
///   [train]     epochs, batch_size, learning_rate, adam_beta1, adam_beta2, adam_eps,
///               seed, collapse_kl_threshold
///   [output]    dir
/// Relative paths resolve against `base_dir`.
struct RunConfig {
  std::string data_path;
  std::string output_dir = "run";
  ArchitectureSpec arch;  // input_shape is filled from the dataset
  TrainConfig train;
};

RunConfig parse_run_config(std::string_view text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);

// Exit codes: 0 success, 2 usage/config error, 3 numerical abort, 4 I/O or format error.
enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3, kIo = 4 };

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vaetk::cli

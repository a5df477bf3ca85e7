#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vaetk/datasets.hpp"
#include "vaetk/networks.hpp"
#include "vaetk/objective.hpp"

namespace vaetk {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  ObjectiveConfig objective;
  double collapse_kl_threshold = 0.01;  // nats per latent dimension

  void validate() const;
};

struct AdamState {
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
  std::uint64_t step_count = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Bias-corrected Adam update, in place. Moments are created on first use.
void adam_step(std::vector<Parameter>& params, std::span<const Array> grads, AdamState& state,
               const TrainConfig& cfg);

/// Everything besides the model that a resumed run needs.
struct TrainState {
  AdamState adam;
  std::uint64_t epochs_completed = 0;
  std::optional<double> lambda;  // resolved regularization weight

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct TrainResult {
  VaeModel model;
  TrainState state;
  std::vector<LossReport> history;  // one sample-weighted report per epoch run
};

using EpochCallback = std::function<void(std::size_t epoch, const LossReport&)>;

// Runs epochs state.epochs_completed .. cfg.epochs - 1. Each epoch draws its
// shuffle and noise from an RNG seeded by (cfg.seed, epoch), so a resumed run
// matches an uninterrupted one. Throws NumericalError on a non-finite loss.
TrainResult train(VaeModel model, const LabeledDataset& data, const TrainConfig& cfg,
                  TrainState state = {}, const EpochCallback& on_epoch = {});

// lambda_auto evaluated on the first batch of the data at the given model.
double resolve_auto_lambda(const VaeModel& model, const LabeledDataset& data,
                           const TrainConfig& cfg);

struct CollapseReport {
  std::vector<double> per_dim_kl;
  std::size_t active_dims = 0;
  double mean_mu_norm = 0.0;
  double mean_sigma = 0.0;
  // summed per-pixel variance of decode(mu) across samples / same for the inputs
  double recon_variance_ratio = 0.0;
  bool collapsed = false;
};

CollapseReport diagnose_collapse(const VaeModel& model, const LabeledDataset& data,
                                 const TrainConfig& cfg);

std::size_t count_active_dims(std::span<const double> per_dim_kl, double threshold);

// Posterior means for every sample, [n x d].
Array encode_means(const VaeModel& model, const LabeledDataset& data, std::size_t batch_size);

std::string metrics_csv_header();
std::string metrics_csv_row(std::size_t epoch, const LossReport& report, std::size_t active_dims);
std::string format_collapse_report(const CollapseReport& report);

}  // namespace vaetk

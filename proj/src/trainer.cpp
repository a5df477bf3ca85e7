#include "vaetk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "vaetk/errors.hpp"

namespace vaetk {

using ad::Var;

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ContractError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ContractError("adam_eps must be positive");
  if (!(collapse_kl_threshold >= 0.0)) throw ContractError("collapse threshold must be >= 0");
  objective.validate();
}

void adam_step(std::vector<Parameter>& params, std::span<const Array> grads, AdamState& state,
               const TrainConfig& cfg) {
  if (grads.size() != params.size())
    throw ContractError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].shape() != params[i].value.shape())
      throw ContractError("adam_step: gradient for " + params[i].name + " has shape " +
                          to_string(grads[i].shape()));
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.shape(), 0.0);
      state.second_moment.emplace_back(p.value.shape(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw ContractError("adam_step: optimizer state does not match parameter set");

  ++state.step_count;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

namespace {

Array normal_array(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Array out(std::move(shape));
  for (double& v : out.data()) v = dist(rng);
  return out;
}

struct StepResult {
  Objective objective;
  std::vector<Array> grads;
};

// Builds one graph: encode, Monte Carlo reparameterized decode, objective.
StepResult evaluate_batch(const VaeModel& model, const Array& x, const ObjectiveConfig& obj,
                          std::mt19937_64& rng, bool with_grads, std::size_t epoch,
                          std::size_t batch) {
  ad::Graph g;
  BoundModel bound(g, model, with_grads);
  Var xv = g.constant(x);
  GaussianLatent latent = encode(bound, xv);
  bool finite = latent.mu.value().all_finite();
  for (double lv : latent.logvar.value().data()) {
    const double var = std::exp(lv);
    finite = finite && var > 0.0 && std::isfinite(var);
  }
  if (!finite) throw NumericalError(epoch, batch, "latent");
  const Shape zshape = latent.mu.shape();
  std::vector<Var> x_hats, zs, priors;
  for (std::size_t s = 0; s < obj.mc_samples; ++s) {
    Var z = reparameterize(latent, g.constant(normal_array(zshape, rng)));
    zs.push_back(z);
    x_hats.push_back(decode(bound, z));
    if (obj.divergence == DivergenceKind::MMD) priors.push_back(g.constant(normal_array(zshape, rng)));
  }
  StepResult out{assemble_objective(xv, x_hats, latent, zs, priors, obj), {}};
  if (with_grads && std::isfinite(out.objective.report.total)) {
    const auto grads = g.backward(out.objective.total);
    for (Var p : bound.params()) out.grads.push_back(grads[p]);
  }
  return out;
}

void check_finite(const LossReport& r, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(r.recon)) throw NumericalError(epoch, batch, "reconstruction");
  if (!std::isfinite(r.divergence)) throw NumericalError(epoch, batch, "divergence");
  if (!std::isfinite(r.total)) throw NumericalError(epoch, batch, "total");
}

void add_weighted(LossReport& acc, const LossReport& r, double w) {
  acc.recon += w * r.recon;
  acc.divergence += w * r.divergence;
  acc.total += w * r.total;
  if (acc.per_dim_kl.empty()) acc.per_dim_kl.assign(r.per_dim_kl.size(), 0.0);
  for (std::size_t j = 0; j < r.per_dim_kl.size(); ++j) acc.per_dim_kl[j] += w * r.per_dim_kl[j];
}

std::vector<std::size_t> first_batch(const LabeledDataset& data, std::size_t batch_size) {
  std::vector<std::size_t> idx(std::min(batch_size, data.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void check_compatible(const VaeModel& model, const LabeledDataset& data) {
  data.validate();
  if (data.size() == 0) throw ContractError("dataset is empty");
  if (data.sample_shape() != model.spec.input_shape)
    throw DimensionError("dataset samples " + to_string(data.sample_shape()) +
                         " do not match model input " + to_string(model.spec.input_shape));
}

}  // namespace

double resolve_auto_lambda(const VaeModel& model, const LabeledDataset& data,
                           const TrainConfig& cfg) {
  check_compatible(model, data);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x1a3bu};
  std::mt19937_64 rng(seq);
  ObjectiveConfig obj = cfg.objective;
  obj.lambda = 1.0;
  const auto idx = first_batch(data, cfg.batch_size);
  auto r = evaluate_batch(model, data.gather(idx), obj, rng, false, 0, 0).objective.report;
  check_finite(r, 0, 0);
  return auto_lambda(r.recon, r.divergence);
}

TrainResult train(VaeModel model, const LabeledDataset& data, const TrainConfig& cfg,
                  TrainState state, const EpochCallback& on_epoch) {
  cfg.validate();
  check_compatible(model, data);

  if (!state.lambda)
    state.lambda = cfg.objective.lambda_auto ? resolve_auto_lambda(model, data, cfg)
                                             : cfg.objective.lambda;
  ObjectiveConfig obj = cfg.objective;
  obj.lambda = *state.lambda;

  TrainResult result{std::move(model), std::move(state), {}};
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = result.state.epochs_completed; epoch < cfg.epochs; ++epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                      static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    LossReport epoch_report;
    epoch_report.lambda = obj.lambda;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      std::span<const std::size_t> idx(order.data() + start, len);
      auto step = evaluate_batch(result.model, data.gather(idx), obj, rng, true, epoch,
                                 batch_index);
      check_finite(step.objective.report, epoch, batch_index);
      for (const auto& g : step.grads)
        if (!g.all_finite()) throw NumericalError(epoch, batch_index, "gradient");
      adam_step(result.model.params, step.grads, result.state.adam, cfg);
      add_weighted(epoch_report, step.objective.report, static_cast<double>(len));
    }
    const double inv = 1.0 / static_cast<double>(n);
    epoch_report.recon *= inv;
    epoch_report.divergence *= inv;
    epoch_report.total *= inv;
    for (double& v : epoch_report.per_dim_kl) v *= inv;

    result.state.epochs_completed = epoch + 1;
    result.history.push_back(epoch_report);
    if (on_epoch) on_epoch(epoch, epoch_report);
  }
  return result;
}

std::size_t count_active_dims(std::span<const double> per_dim_kl, double threshold) {
  return static_cast<std::size_t>(
      std::count_if(per_dim_kl.begin(), per_dim_kl.end(), [&](double v) { return v > threshold; }));
}

namespace {

// Streaming per-element mean and M2 (Welford); identical inputs give exactly zero.
struct RunningVariance {
  std::vector<double> mean, m2;
  std::size_t count = 0;

  void add_rows(const Array& rows) {
    const std::size_t n = rows.dim(0);
    const std::size_t width = rows.size() / n;
    if (mean.empty()) {
      mean.assign(width, 0.0);
      m2.assign(width, 0.0);
    }
    auto d = rows.data();
    for (std::size_t i = 0; i < n; ++i) {
      ++count;
      const double k = static_cast<double>(count);
      for (std::size_t j = 0; j < width; ++j) {
        const double x = d[i * width + j];
        const double delta = x - mean[j];
        mean[j] += delta / k;
        m2[j] += delta * (x - mean[j]);
      }
    }
  }
  double total_variance() const {
    double s = 0.0;
    for (double v : m2) s += v;
    return count ? s / static_cast<double>(count) : 0.0;
  }
};

}  // namespace

CollapseReport diagnose_collapse(const VaeModel& model, const LabeledDataset& data,
                                 const TrainConfig& cfg) {
  check_compatible(model, data);
  const std::size_t n = data.size();
  const std::size_t d = model.spec.latent_dim;
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);

  CollapseReport report;
  report.per_dim_kl.assign(d, 0.0);
  RunningVariance input_var, recon_var;
  double mu_norm = 0.0, sigma = 0.0;

  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t len = std::min(bs, n - start);
    idx.resize(len);
    std::iota(idx.begin(), idx.end(), start);
    const Array x = data.gather(idx);

    ad::Graph g;
    BoundModel bound(g, model, false);
    GaussianLatent latent = encode(bound, g.constant(x));
    const KlResult kl = kl_to_standard_normal(latent);
    for (std::size_t j = 0; j < d; ++j)
      report.per_dim_kl[j] += kl.per_dim[j] * static_cast<double>(len);

    const Array& mu = latent.mu.value();
    const Array& lv = latent.logvar.value();
    for (std::size_t i = 0; i < len; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        sq += mu.at(i, j) * mu.at(i, j);
        sigma += std::exp(0.5 * lv.at(i, j));
      }
      mu_norm += std::sqrt(sq);
    }
    const Var x_hat = decode(bound, latent.mu);
    input_var.add_rows(x);
    recon_var.add_rows(x_hat.value());
  }

  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : report.per_dim_kl) v *= inv;
  report.active_dims = count_active_dims(report.per_dim_kl, cfg.collapse_kl_threshold);
  report.mean_mu_norm = mu_norm * inv;
  report.mean_sigma = sigma * inv / static_cast<double>(d);
  const double in_var = input_var.total_variance();
  report.recon_variance_ratio = in_var > 0.0 ? recon_var.total_variance() / in_var : 0.0;
  report.collapsed = report.active_dims == 0 || report.recon_variance_ratio < 0.05;
  return report;
}

Array encode_means(const VaeModel& model, const LabeledDataset& data, std::size_t batch_size) {
  check_compatible(model, data);
  const std::size_t n = data.size();
  const std::size_t d = model.spec.latent_dim;
  const std::size_t bs = std::max<std::size_t>(batch_size, 1);
  Array out(Shape{n, d});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t len = std::min(bs, n - start);
    idx.resize(len);
    std::iota(idx.begin(), idx.end(), start);
    ad::Graph g;
    BoundModel bound(g, model, false);
    const Array& mu = encode(bound, g.constant(data.gather(idx))).mu.value();
    std::copy(mu.data().begin(), mu.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(start * d));
  }
  return out;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string metrics_csv_header() { return "epoch,recon,divergence,lambda,total,active_dims\n"; }

std::string metrics_csv_row(std::size_t epoch, const LossReport& r, std::size_t active_dims) {
  return std::to_string(epoch) + "," + fmt(r.recon) + "," + fmt(r.divergence) + "," +
         fmt(r.lambda) + "," + fmt(r.total) + "," + std::to_string(active_dims) + "\n";
}

std::string format_collapse_report(const CollapseReport& r) {
  std::ostringstream out;
  out << "active_dims=" << r.active_dims << "\n"
      << "mean_mu_norm=" << fmt(r.mean_mu_norm) << "\n"
      << "mean_sigma=" << fmt(r.mean_sigma) << "\n"
      << "recon_variance_ratio=" << fmt(r.recon_variance_ratio) << "\n"
      << "collapsed=" << (r.collapsed ? "true" : "false") << "\n"
      << "per_dim_kl=";
  for (std::size_t j = 0; j < r.per_dim_kl.size(); ++j)
    out << (j ? "," : "") << fmt(r.per_dim_kl[j]);
  out << "\n";
  return out.str();
}

}  // namespace vaetk

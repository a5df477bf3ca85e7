#include "vaetk/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "vaetk/binary_io.hpp"
#include "vaetk/checkpoint.hpp"
#include "vaetk/datasets.hpp"
#include "vaetk/errors.hpp"
#include "vaetk/hypersphere.hpp"
#include "vaetk/latent_analysis.hpp"

namespace vaetk::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

template <typename T, typename Fn>
std::vector<T> parse_list(const std::string& key, const std::string& v, Fn each) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(each(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  return parse_list<std::size_t>(key, v, [](const std::string& k, const std::string& x) {
    return static_cast<std::size_t>(parse_u64(k, x));
  });
}

std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  return parse_list<double>(key, v, parse_double);
}

std::string resolve(const std::string& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path.string() : (fs::path(base) / path).lexically_normal().string();
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const std::string& base_dir) {
  RunConfig cfg;
  cfg.arch.kind = ArchKind::MLP;
  bool have_data = false;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::map<std::string, int> seen;
  for (int line_no = 1; std::getline(in, raw); ++line_no) {
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      static const char* known[] = {"data", "model", "objective", "train", "output"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known))
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside a section");
    const std::string full = section + "." + key;
    if (seen[full]++) throw ConfigError(where + ": duplicate key " + full);
    if (value.empty()) throw ConfigError(where + ": empty value for " + full);

    auto& t = cfg.train;
    auto& o = cfg.train.objective;
    auto& a = cfg.arch;
    if (full == "data.path") {
      cfg.data_path = resolve(base_dir, value);
      have_data = true;
    } else if (full == "output.dir") {
      cfg.output_dir = resolve(base_dir, value);
    } else if (full == "model.kind") {
      if (value == "mlp") a.kind = ArchKind::MLP;
      else if (value == "conv2d") a.kind = ArchKind::Conv2D;
      else throw ConfigError(full + ": expected mlp or conv2d");
    } else if (full == "model.latent_dim") {
      a.latent_dim = parse_u64(full, value);
    } else if (full == "model.hidden") {
      a.hidden_widths = parse_sizes(full, value);
    } else if (full == "model.conv_channels") {
      a.conv_channels = parse_sizes(full, value);
    } else if (full == "model.kernel") {
      a.kernel = parse_u64(full, value);
    } else if (full == "model.stride") {
      a.stride = parse_u64(full, value);
    } else if (full == "objective.divergence") {
      if (value == "kl") o.divergence = DivergenceKind::KL;
      else if (value == "mmd") o.divergence = DivergenceKind::MMD;
      else throw ConfigError(full + ": expected kl or mmd");
    } else if (full == "objective.lambda") {
      o.lambda_auto = value == "auto";
      if (!o.lambda_auto) o.lambda = parse_double(full, value);
    } else if (full == "objective.recon") {
      if (value == "mse") o.recon = ReconKind::MSE;
      else if (value == "gaussian_nll") o.recon = ReconKind::GaussianNLL;
      else if (value == "dssim") o.recon = ReconKind::DSSIM;
      else throw ConfigError(full + ": expected mse, gaussian_nll or dssim");
    } else if (full == "objective.mc_samples") {
      o.mc_samples = parse_u64(full, value);
    } else if (full == "objective.mmd_bandwidths") {
      o.mmd_bandwidths = parse_doubles(full, value);
    } else if (full == "objective.ssim_window") {
      o.ssim_window = parse_u64(full, value);
    } else if (full == "objective.ssim_c1") {
      o.ssim_c1 = parse_double(full, value);
    } else if (full == "objective.ssim_c2") {
      o.ssim_c2 = parse_double(full, value);
    } else if (full == "objective.dynamic_range") {
      o.dynamic_range = parse_double(full, value);
    } else if (full == "train.epochs") {
      t.epochs = parse_u64(full, value);
    } else if (full == "train.batch_size") {
      t.batch_size = parse_u64(full, value);
    } else if (full == "train.learning_rate") {
      t.learning_rate = parse_double(full, value);
    } else if (full == "train.adam_beta1") {
      t.adam_beta1 = parse_double(full, value);
    } else if (full == "train.adam_beta2") {
      t.adam_beta2 = parse_double(full, value);
    } else if (full == "train.adam_eps") {
      t.adam_eps = parse_double(full, value);
    } else if (full == "train.seed") {
      t.seed = parse_u64(full, value);
    } else if (full == "train.collapse_kl_threshold") {
      t.collapse_kl_threshold = parse_double(full, value);
    } else {
      throw ConfigError(where + ": unknown key " + full);
    }
  }
  if (!have_data) throw ConfigError("missing [data] path");
  if (!fs::path(cfg.output_dir).is_absolute()) cfg.output_dir = resolve(base_dir, cfg.output_dir);
  try {
    cfg.train.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto base = fs::path(path).parent_path();
  return parse_run_config(ss.str(), base.empty() ? "." : base.string());
}

namespace {

void write_text(const std::string& path, const std::string& text) { io::write_file(path, text); }

void require_readable(const std::string& path, const char* what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw FormatError(std::string(what) + " not found: " + path);
}

int cmd_gen(const std::string& kind, std::size_t n, double noise, std::size_t side,
            std::uint64_t seed, std::string out_path, std::ostream& out) {
  LabeledDataset ds;
  if (kind == "spiral")
    ds = gen_spiral(n, noise, seed);
  else if (kind == "ellipse")
    ds = gen_factor_images(n, side, seed);
  else
    throw ConfigError("unknown dataset kind '" + kind + "' (expected spiral or ellipse)");
  if (out_path.empty()) out_path = kind + ".vaed";
  save_dataset(ds, out_path);
  out << "wrote " << ds.size() << " samples of shape " << to_string(ds.sample_shape()) << " to "
      << out_path << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_run_config(config_path);
  if (const char* env = std::getenv("VAE_SEED"); env && *env)
    cfg.train.seed = parse_u64("VAE_SEED", env);
  require_readable(cfg.data_path, "dataset");
  fs::create_directories(cfg.output_dir);

  const LabeledDataset data = load_dataset(cfg.data_path);
  cfg.arch.input_shape = data.sample_shape();
  VaeModel model = init_model(cfg.arch, cfg.train.seed);

  const std::string metrics_path = (fs::path(cfg.output_dir) / "metrics.csv").string();
  std::string metrics = metrics_csv_header();
  TrainResult result;
  try {
    result = train(std::move(model), data, cfg.train, {},
                   [&](std::size_t epoch, const LossReport& r) {
                     metrics += metrics_csv_row(
                         epoch, r, count_active_dims(r.per_dim_kl, cfg.train.collapse_kl_threshold));
                   });
  } catch (const NumericalError& e) {
    write_text(metrics_path, metrics);
    err << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  }
  write_text(metrics_path, metrics);
  const std::string ckpt_path = (fs::path(cfg.output_dir) / "checkpoint.vaec").string();
  save_checkpoint(result.model, result.state, ckpt_path);

  const CollapseReport report = diagnose_collapse(result.model, data, cfg.train);
  std::ostringstream summary;
  summary << "[summary]\n"
          << "epochs=" << result.state.epochs_completed << "\n"
          << "divergence=" << name(cfg.train.objective.divergence) << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", result.state.lambda.value_or(0.0));
  summary << "lambda=" << buf << "\n" << format_collapse_report(report);
  write_text((fs::path(cfg.output_dir) / "summary.txt").string(), summary.str());
  out << summary.str();
  return kOk;
}

int cmd_diagnose(const std::string& ckpt_path, const std::string& data_path, double threshold,
                 std::size_t batch_size, const std::string& out_path, std::ostream& out) {
  require_readable(ckpt_path, "checkpoint");
  require_readable(data_path, "dataset");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const LabeledDataset data = load_dataset(data_path);
  TrainConfig cfg;
  cfg.collapse_kl_threshold = threshold;
  cfg.batch_size = batch_size;
  const CollapseReport report = diagnose_collapse(ckpt.model, data, cfg);
  if (!out_path.empty()) {
    std::string csv = "dim,kl,active\n";
    char buf[96];
    for (std::size_t j = 0; j < report.per_dim_kl.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%d\n", j, report.per_dim_kl[j],
                    report.per_dim_kl[j] > threshold ? 1 : 0);
      csv += buf;
    }
    write_text(out_path, csv);
  }
  out << format_collapse_report(report);
  return kOk;
}

int cmd_analyze(const std::string& ckpt_path, const std::string& data_path,
                const std::string& link_name, std::size_t batch_size, const std::string& out_path,
                const std::string& scatter_path, std::ostream& out) {
  require_readable(ckpt_path, "checkpoint");
  require_readable(data_path, "dataset");
  Link link;
  if (link_name == "identity") link = Link::Identity;
  else if (link_name == "logistic") link = Link::Logistic;
  else throw ConfigError("--link must be identity or logistic");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const LabeledDataset data = load_dataset(data_path);
  if (!data.targets) throw ConfigError("dataset " + data_path + " has no targets to analyze");
  const Array latents = encode_means(ckpt.model, data, batch_size);
  const GlmFit fit = fit_glm(latents, *data.targets, link);
  const std::string csv = glm_csv(fit);
  if (!out_path.empty()) write_text(out_path, csv);
  if (!scatter_path.empty()) write_text(scatter_path, latent_target_scatter(latents, *data.targets).table_csv);
  out << csv;
  return kOk;
}

int cmd_sample(const std::string& ckpt_path, std::size_t count, std::uint64_t seed,
               const std::string& out_path, const std::string& csv_path, std::ostream& out) {
  require_readable(ckpt_path, "checkpoint");
  if (count < 1) throw ConfigError("--count must be >= 1");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::size_t d = ckpt.model.spec.latent_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Array z(Shape{count, d});
  for (double& v : z.data()) v = gauss(rng);

  ad::Graph g;
  BoundModel bound(g, ckpt.model, false);
  LabeledDataset ds;
  ds.samples = decode(bound, g.constant(z)).value();
  ds.factors = z;
  ds.meta = {"prior_samples", seed, "sample/v1"};
  if (!out_path.empty()) save_dataset(ds, out_path);
  std::string csv;
  char buf[40];
  const std::size_t width = ds.sample_size();
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      std::snprintf(buf, sizeof buf, "%s%.17g", j ? "," : "", ds.samples[i * width + j]);
      csv += buf;
    }
    csv += "\n";
  }
  if (!csv_path.empty()) write_text(csv_path, csv);
  if (out_path.empty() && csv_path.empty()) out << csv;
  else out << "decoded " << count << " prior samples\n";
  return kOk;
}

int cmd_sphere(const std::vector<int>& dims, const std::vector<double>& eps, std::size_t mc_points,
               int mc_dim, std::uint64_t seed, const std::string& out_path, std::ostream& out) {
  std::string csv = shell_sweep_csv(dims, eps);
  if (mc_points > 0) {
    const auto rc = radius_concentration_mc(mc_dim, mc_points, seed);
    char buf[160];
    csv += "\n" + radius_quantiles_csv(rc);
    std::snprintf(buf, sizeof buf, "\nks_statistic,dkw_bound,within_dkw\n%.17g,%.17g,%s\n",
                  rc.ks_statistic, rc.dkw_bound, rc.within_dkw ? "true" : "false");
    csv += buf;
  }
  if (!out_path.empty()) write_text(out_path, csv);
  out << csv;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational autoencoder toolkit", "vaetk"};
  app.require_subcommand(1);

  std::string gen_kind, gen_out;
  std::size_t gen_n = 0, gen_side = 16;
  double gen_noise = 0.0;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("kind", gen_kind, "spiral or ellipse")->required();
  gen->add_option("--n", gen_n, "Number of samples")->required();
  gen->add_option("--noise", gen_noise, "Spiral noise standard deviation");
  gen->add_option("--side", gen_side, "Ellipse image side length");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output .vaed path (default <kind>.vaed)");

  std::string train_config;
  auto* tr = app.add_subcommand("train", "Train a model from a run config");
  tr->add_option("config", train_config, "Run config file")->required();

  std::string ckpt, data, out_path, scatter_path, csv_path, link = "identity";
  double threshold = 0.01;
  std::size_t batch_size = 256, count = 16;
  std::uint64_t seed = 0;
  auto* diag = app.add_subcommand("diagnose", "Posterior-collapse diagnostics");
  diag->add_option("--checkpoint", ckpt)->required();
  diag->add_option("--data", data)->required();
  diag->add_option("--threshold", threshold, "Active-dimension KL threshold (nats)");
  diag->add_option("--batch-size", batch_size);
  diag->add_option("--out", out_path, "Per-dimension CSV");

  auto* an = app.add_subcommand("analyze", "GLM of latent means against dataset targets");
  an->add_option("--checkpoint", ckpt)->required();
  an->add_option("--data", data)->required();
  an->add_option("--link", link, "identity or logistic");
  an->add_option("--batch-size", batch_size);
  an->add_option("--out", out_path, "GLM CSV");
  an->add_option("--scatter", scatter_path, "Latent/target pairs CSV");

  auto* sm = app.add_subcommand("sample", "Decode samples drawn from the prior");
  sm->add_option("--checkpoint", ckpt)->required();
  sm->add_option("--count", count);
  sm->add_option("--seed", seed);
  sm->add_option("--out", out_path, "Output .vaed path");
  sm->add_option("--csv", csv_path, "Output CSV path");

  std::vector<int> dims{10, 100, 1000, 10000};
  std::vector<double> eps{0.001};
  std::size_t mc_points = 0;
  int mc_dim = 10;
  auto* sp = app.add_subcommand("sphere", "Hypersphere shell ratios and radius concentration");
  sp->add_option("--n", dims, "Dimensions")->delimiter(',');
  sp->add_option("--eps-ratio", eps, "Shell thickness over radius")->delimiter(',');
  sp->add_option("--mc-points", mc_points, "Monte Carlo points (0 disables)");
  sp->add_option("--mc-dim", mc_dim, "Monte Carlo dimension");
  sp->add_option("--seed", seed);
  sp->add_option("--out", out_path, "Output CSV path");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_kind, gen_n, gen_noise, gen_side, gen_seed, gen_out, out);
    if (*tr) return cmd_train(train_config, out, err);
    if (*diag) return cmd_diagnose(ckpt, data, threshold, batch_size, out_path, out);
    if (*an) return cmd_analyze(ckpt, data, link, batch_size, out_path, scatter_path, out);
    if (*sm) return cmd_sample(ckpt, count, seed, out_path, csv_path, out);
    if (*sp) return cmd_sphere(dims, eps, mc_points, mc_dim, seed, out_path, out);
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  err << app.help();
  return kUsage;
}

}  // namespace vaetk::cli

#include "vaetk/networks.hpp"

#include <cmath>
#include <random>

#include "vaetk/errors.hpp"

namespace vaetk {

using ad::Var;

const char* name(ArchKind kind) { return kind == ArchKind::MLP ? "mlp" : "conv2d"; }

std::vector<std::pair<std::size_t, std::size_t>> ArchitectureSpec::conv_extents() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (kind != ArchKind::Conv2D || input_shape.size() != 3) return out;
  std::size_t h = input_shape[1], w = input_shape[2];
  out.emplace_back(h, w);
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (h + 2 * (kernel / 2) < kernel || w + 2 * (kernel / 2) < kernel)
      throw SpecError("conv stage " + std::to_string(i) + " has no valid positions");
    h = ad::conv_out_extent(h, kernel, stride, kernel / 2);
    w = ad::conv_out_extent(w, kernel, stride, kernel / 2);
    out.emplace_back(h, w);
  }
  return out;
}

void ArchitectureSpec::validate() const {
  if (latent_dim < 1) throw SpecError("latent_dim must be >= 1");
  if (input_shape.empty()) throw SpecError("input_shape must not be empty");
  for (auto e : input_shape)
    if (e == 0) throw SpecError("input_shape has a zero extent");
  if (kind == ArchKind::MLP) {
    for (auto w : hidden_widths)
      if (w == 0) throw SpecError("hidden widths must be positive");
    return;
  }
  if (input_shape.size() != 3) throw SpecError("conv2d input_shape must be [C, H, W]");
  if (conv_channels.empty()) throw SpecError("conv2d needs at least one conv stage");
  for (auto c : conv_channels)
    if (c == 0) throw SpecError("conv channel counts must be positive");
  if (kernel == 0 || kernel % 2 == 0) throw SpecError("conv kernel must be odd");
  if (stride == 0) throw SpecError("conv stride must be positive");
  const auto ext = conv_extents();
  for (std::size_t i = 1; i < ext.size(); ++i) {
    if (ext[i].first == 0 || ext[i].second == 0)
      throw SpecError("conv schedule reaches an empty extent at stage " + std::to_string(i));
    if (ext[i].first * stride != ext[i - 1].first || ext[i].second * stride != ext[i - 1].second)
      throw SpecError("conv schedule is not invertible by upsampling: " +
                      std::to_string(ext[i - 1].first) + "x" + std::to_string(ext[i - 1].second) +
                      " -> " + std::to_string(ext[i].first) + "x" + std::to_string(ext[i].second));
  }
}

ArchitectureSpec default_mlp_spec(Shape input_shape, std::size_t latent_dim) {
  ArchitectureSpec s;
  s.kind = ArchKind::MLP;
  s.input_shape = std::move(input_shape);
  s.latent_dim = latent_dim;
  return s;
}

ArchitectureSpec default_conv_spec(Shape input_shape, std::size_t latent_dim) {
  ArchitectureSpec s;
  s.kind = ArchKind::Conv2D;
  s.input_shape = std::move(input_shape);
  s.latent_dim = latent_dim;
  return s;
}

namespace {

struct ParamDecl {
  std::string name;
  Shape shape;
  std::size_t fan_in;  // 0 for biases
  bool feeds_relu;
};

std::vector<ParamDecl> declare(const ArchitectureSpec& spec) {
  spec.validate();
  std::vector<ParamDecl> out;
  const std::size_t d = spec.latent_dim;
  auto linear = [&](const std::string& prefix, std::size_t in, std::size_t width, bool relu) {
    out.push_back({prefix + ".weight", {in, width}, in, relu});
    out.push_back({prefix + ".bias", {width}, 0, relu});
  };
  auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout, bool relu) {
    const std::size_t k = spec.kernel;
    out.push_back({prefix + ".weight", {cout, cin, k, k}, cin * k * k, relu});
    out.push_back({prefix + ".bias", {cout, 1, 1}, 0, relu});
  };

  if (spec.kind == ArchKind::MLP) {
    std::size_t width = spec.input_size();
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
      linear("enc.fc" + std::to_string(i), width, spec.hidden_widths[i], true);
      width = spec.hidden_widths[i];
    }
    linear("enc.head", width, 2 * d, false);
    width = d;
    for (std::size_t i = spec.hidden_widths.size(); i-- > 0;) {
      linear("dec.fc" + std::to_string(spec.hidden_widths.size() - 1 - i), width,
             spec.hidden_widths[i], true);
      width = spec.hidden_widths[i];
    }
    linear("dec.out", width, spec.input_size(), false);
    return out;
  }

  const auto ext = spec.conv_extents();
  std::size_t cin = spec.input_shape[0];
  for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
    conv("enc.conv" + std::to_string(i), cin, spec.conv_channels[i], true);
    cin = spec.conv_channels[i];
  }
  const std::size_t flat = cin * ext.back().first * ext.back().second;
  linear("enc.head", flat, 2 * d, false);
  linear("dec.fc", d, flat, true);
  const std::size_t stages = spec.conv_channels.size();
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t from = spec.conv_channels[stages - 1 - s];
    const bool last = s + 1 == stages;
    const std::size_t to = last ? spec.input_shape[0] : spec.conv_channels[stages - 2 - s];
    conv("dec.conv" + std::to_string(s), from, to, !last);
  }
  return out;
}

Var linear(const BoundModel& m, const std::string& prefix, Var x) {
  return ad::matmul(x, m.param(prefix + ".weight")) + m.param(prefix + ".bias");
}

Var conv(const BoundModel& m, const std::string& prefix, Var x, std::size_t stride) {
  const std::size_t k = m.model().spec.kernel;
  return ad::conv2d(x, m.param(prefix + ".weight"), stride, k / 2) + m.param(prefix + ".bias");
}

}  // namespace

std::size_t VaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

const Parameter& VaeModel::param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw ContractError("model has no parameter named " + name);
}

Parameter& VaeModel::param(const std::string& name) {
  return const_cast<Parameter&>(std::as_const(*this).param(name));
}

std::size_t analytic_parameter_count(const ArchitectureSpec& spec) {
  spec.validate();
  const std::size_t d = spec.latent_dim;
  std::size_t n = 0;
  if (spec.kind == ArchKind::MLP) {
    std::vector<std::size_t> widths{spec.input_size()};
    widths.insert(widths.end(), spec.hidden_widths.begin(), spec.hidden_widths.end());
    // encoder: input -> hidden... -> 2d ; decoder: d -> reversed hidden... -> input
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += (widths[i] + 1) * widths[i + 1];
    n += (widths.back() + 1) * 2 * d;
    std::vector<std::size_t> dec{d};
    dec.insert(dec.end(), spec.hidden_widths.rbegin(), spec.hidden_widths.rend());
    dec.push_back(spec.input_size());
    for (std::size_t i = 0; i + 1 < dec.size(); ++i) n += (dec[i] + 1) * dec[i + 1];
    return n;
  }
  const std::size_t k2 = spec.kernel * spec.kernel;
  std::vector<std::size_t> ch{spec.input_shape[0]};
  ch.insert(ch.end(), spec.conv_channels.begin(), spec.conv_channels.end());
  for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
    n += ch[i] * ch[i + 1] * k2 + ch[i + 1];  // encoder conv i
    n += ch[i + 1] * ch[i] * k2 + ch[i];      // its decoder mirror
  }
  const auto ext = spec.conv_extents();
  const std::size_t flat = ch.back() * ext.back().first * ext.back().second;
  n += (flat + 1) * 2 * d;  // encoder head
  n += (d + 1) * flat;      // decoder fc
  return n;
}

VaeModel init_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  VaeModel model{spec, {}, seed};
  std::mt19937_64 rng(seed);
  for (auto& decl : declare(spec)) {
    Array value(decl.shape, 0.0);
    if (decl.fan_in > 0) {
      const double scale = decl.feeds_relu ? 6.0 : 3.0;
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      const double bound = std::sqrt(scale / static_cast<double>(decl.fan_in));
      for (double& v : value.data()) v = bound * dist(rng);
    }
    model.params.push_back({decl.name, std::move(value)});
  }
  return model;
}

BoundModel::BoundModel(ad::Graph& graph, const VaeModel& model, bool requires_grad)
    : model_(&model) {
  params_.reserve(model.params.size());
  for (const auto& p : model.params) params_.push_back(graph.leaf(p.value, requires_grad));
}

BoundModel::BoundModel(const VaeModel& model, std::vector<Var> params)
    : model_(&model), params_(std::move(params)) {
  if (params_.size() != model.params.size())
    throw ContractError("expected " + std::to_string(model.params.size()) +
                        " parameter leaves, got " + std::to_string(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].shape() != model.params[i].value.shape())
      throw DimensionError("parameter " + model.params[i].name + " bound with shape " +
                           to_string(params_[i].shape()));
}

Var BoundModel::param(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (model_->params[i].name == name) return params_[i];
  throw ContractError("model has no parameter named " + name);
}

GaussianLatent encode(const BoundModel& m, Var x) {
  const auto& spec = m.model().spec;
  const Shape& xs = x.shape();
  if (xs.size() != spec.input_shape.size() + 1 ||
      !std::equal(spec.input_shape.begin(), spec.input_shape.end(), xs.begin() + 1))
    throw DimensionError("encoder expects [batch, " + to_string(spec.input_shape) + "], got " +
                         to_string(xs));
  const std::size_t batch = xs[0];
  const std::size_t d = spec.latent_dim;

  Var h;
  if (spec.kind == ArchKind::MLP) {
    h = ad::reshape(x, Shape{batch, spec.input_size()});
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i)
      h = ad::relu(linear(m, "enc.fc" + std::to_string(i), h));
  } else {
    h = x;
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i)
      h = ad::relu(conv(m, "enc.conv" + std::to_string(i), h, spec.stride));
    h = ad::reshape(h, Shape{batch, numel(h.shape()) / batch});
  }
  Var head = linear(m, "enc.head", h);
  return GaussianLatent{ad::narrow(head, 1, 0, d), ad::narrow(head, 1, d, d)};
}

Var decode(const BoundModel& m, Var z) {
  const auto& spec = m.model().spec;
  const Shape& zs = z.shape();
  if (zs.size() != 2 || zs[1] != spec.latent_dim)
    throw DimensionError("decoder expects [batch x " + std::to_string(spec.latent_dim) +
                         "], got " + to_string(zs));
  const std::size_t batch = zs[0];
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), spec.input_shape.begin(), spec.input_shape.end());

  if (spec.kind == ArchKind::MLP) {
    Var h = z;
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i)
      h = ad::relu(linear(m, "dec.fc" + std::to_string(i), h));
    return ad::reshape(linear(m, "dec.out", h), out_shape);
  }

  const auto ext = spec.conv_extents();
  const std::size_t stages = spec.conv_channels.size();
  Var h = ad::relu(linear(m, "dec.fc", z));
  h = ad::reshape(h, Shape{batch, spec.conv_channels.back(), ext.back().first, ext.back().second});
  for (std::size_t s = 0; s < stages; ++s) {
    h = conv(m, "dec.conv" + std::to_string(s), ad::upsample_nearest(h, spec.stride), 1);
    if (s + 1 < stages) h = ad::relu(h);
  }
  return h;
}

}  // namespace vaetk

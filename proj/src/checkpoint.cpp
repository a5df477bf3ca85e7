#include "vaetk/checkpoint.hpp"

#include "vaetk/binary_io.hpp"
#include "vaetk/errors.hpp"

namespace vaetk {

namespace {

constexpr char kMagic[] = "VAEC";
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kMaxList = 1 << 16;

void write_shape(io::Writer& w, const Shape& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  for (auto e : s) w.u64(e);
}

Shape read_shape(io::Reader& r) {
  const auto rank = r.u32();
  if (rank > 8) throw FormatError("checkpoint: rank " + std::to_string(rank) + " too large");
  Shape s(rank);
  for (auto& e : s) {
    e = r.u64();
    if (e == 0 || e > (std::size_t{1} << 32)) throw FormatError("checkpoint: bad extent");
  }
  return s;
}

void write_list(io::Writer& w, const std::vector<std::size_t>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (auto x : v) w.u64(x);
}

std::vector<std::size_t> read_list(io::Reader& r) {
  const auto n = r.u32();
  if (n > kMaxList) throw FormatError("checkpoint: list too long");
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = r.u64();
  return v;
}

void write_values(io::Writer& w, const Array& a) {
  for (double v : a.data()) w.f64(v);
}

Array read_values(io::Reader& r, const Shape& shape) {
  const std::size_t n = numel(shape);
  if (r.remaining() / 8 < n) throw FormatError("checkpoint: truncated parameter blob");
  std::vector<double> data(n);
  for (double& v : data) v = r.f64();
  return Array(shape, std::move(data));
}

}  // namespace

std::string encode_checkpoint(const VaeModel& model, const TrainState& state) {
  io::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kVersion);

  const auto& s = model.spec;
  w.u8(static_cast<std::uint8_t>(s.kind));
  write_shape(w, s.input_shape);
  w.u64(s.latent_dim);
  write_list(w, s.hidden_widths);
  write_list(w, s.conv_channels);
  w.u64(s.kernel);
  w.u64(s.stride);
  w.u64(model.seed);

  w.u32(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& p : model.params) {
    w.str(p.name);
    write_shape(w, p.value.shape());
    write_values(w, p.value);
  }

  const auto& adam = state.adam;
  w.u64(adam.step_count);
  w.u8(adam.first_moment.empty() ? 0 : 1);
  if (!adam.first_moment.empty()) {
    if (adam.first_moment.size() != model.params.size() ||
        adam.second_moment.size() != model.params.size())
      throw ContractError("optimizer state does not match the parameter set");
    for (const auto& m : adam.first_moment) write_values(w, m);
    for (const auto& v : adam.second_moment) write_values(w, v);
  }
  w.u64(state.epochs_completed);
  w.u8(state.lambda ? 1 : 0);
  w.f64(state.lambda.value_or(0.0));
  return w.buffer();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  io::Reader r(bytes, "checkpoint");
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = r.u16();
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));

  ArchitectureSpec spec;
  const auto kind = r.u8();
  if (kind > 1) throw FormatError("checkpoint: unknown architecture kind");
  spec.kind = static_cast<ArchKind>(kind);
  spec.input_shape = read_shape(r);
  spec.latent_dim = r.u64();
  spec.hidden_widths = read_list(r);
  spec.conv_channels = read_list(r);
  spec.kernel = r.u64();
  spec.stride = r.u64();
  const auto seed = r.u64();

  // The embedded spec determines every parameter name and shape.
  VaeModel expected;
  try {
    expected = init_model(spec, seed);
  } catch (const SpecError& e) {
    throw IntegrityError(std::string("checkpoint: embedded spec is invalid: ") + e.what());
  }

  const auto count = r.u32();
  if (count != expected.params.size())
    throw IntegrityError("checkpoint: " + std::to_string(count) + " parameters, spec declares " +
                         std::to_string(expected.params.size()));
  Checkpoint out{VaeModel{spec, {}, seed}, {}};
  for (std::size_t i = 0; i < count; ++i) {
    auto name = r.str();
    Shape shape = read_shape(r);
    const auto& want = expected.params[i];
    if (name != want.name || shape != want.value.shape())
      throw IntegrityError("checkpoint: parameter " + name + " " + to_string(shape) +
                           " does not match spec entry " + want.name + " " +
                           to_string(want.value.shape()));
    out.model.params.push_back({std::move(name), read_values(r, shape)});
  }

  auto& adam = out.state.adam;
  adam.step_count = r.u64();
  const auto has_moments = r.u8();
  if (has_moments > 1) throw FormatError("checkpoint: bad optimizer flag");
  if (has_moments) {
    for (const auto& p : out.model.params) adam.first_moment.push_back(read_values(r, p.value.shape()));
    for (const auto& p : out.model.params) adam.second_moment.push_back(read_values(r, p.value.shape()));
  }
  out.state.epochs_completed = r.u64();
  const auto has_lambda = r.u8();
  if (has_lambda > 1) throw FormatError("checkpoint: bad lambda flag");
  const double lambda = r.f64();
  if (has_lambda) out.state.lambda = lambda;
  r.expect_end();
  return out;
}

void save_checkpoint(const VaeModel& model, const TrainState& state, const std::string& path) {
  io::write_file(path, encode_checkpoint(model, state));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace vaetk

#include "vaetk/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "vaetk/binary_io.hpp"
#include "vaetk/errors.hpp"

namespace vaetk {

namespace {
constexpr char kMagic[] = "VAED";
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kHasTargets = 1;
constexpr std::uint8_t kHasFactors = 2;
}  // namespace

Array LabeledDataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t row = sample_size();
  Shape shape = samples.shape();
  shape[0] = indices.size();
  Array out(shape);
  auto src = samples.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ContractError("sample index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                dst.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return out;
}

void LabeledDataset::validate() const {
  if (samples.rank() < 2) throw DimensionError("samples must be [n, ...]");
  if (targets && targets->size() != size())
    throw DimensionError("targets length " + std::to_string(targets->size()) +
                         " does not match sample count " + std::to_string(size()));
  if (factors && (factors->rank() != 2 || factors->dim(0) != size()))
    throw DimensionError("factors must be [n x k], got " + to_string(factors->shape()));
  if (!samples.all_finite()) throw DomainError("dataset samples contain non-finite values");
}

std::pair<double, double> spiral_point(double t) {
  const double scale = 1.0 / (4.0 * std::numbers::pi);
  return {t * std::cos(t) * scale, t * std::sin(t) * scale};
}

LabeledDataset gen_spiral(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n < 1) throw ContractError("gen_spiral needs n >= 1");
  if (!(noise_sigma >= 0.0)) throw ContractError("noise_sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> param(std::numbers::pi / 2.0, 4.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);

  LabeledDataset ds{Array(Shape{n, 2}), std::nullopt, Array(Shape{n, 1}),
                    {"spiral", seed, "spiral/v1"}};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = param(rng);
    auto [x, y] = spiral_point(t);
    if (noise_sigma > 0.0) {
      x += noise_sigma * noise(rng);
      y += noise_sigma * noise(rng);
    }
    ds.samples.at(i, 0) = x;
    ds.samples.at(i, 1) = y;
    ds.factors->at(i, 0) = t;
  }
  return ds;
}

std::pair<double, double> ellipse_radius_range(std::size_t side) {
  const double s = static_cast<double>(side);
  return {0.15 * s, 0.3 * s};
}

Array render_ellipse(std::size_t side, double cx, double cy, double radius) {
  const double a = radius;
  const double b = kEllipseAspect * radius;
  Array img(Shape{1, side, side});
  for (std::size_t row = 0; row < side; ++row) {
    const double py = static_cast<double>(row) + 0.5;
    for (std::size_t col = 0; col < side; ++col) {
      const double px = static_cast<double>(col) + 0.5;
      const double u = (px - cx) / a;
      const double v = (py - cy) / b;
      const double rho = std::sqrt(u * u + v * v);
      img[row * side + col] = std::clamp(0.5 + (1.0 - rho) * b, 0.0, 1.0);
    }
  }
  return img;
}

LabeledDataset gen_factor_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  if (n < 1) throw ContractError("gen_factor_images needs n >= 1");
  if (side < 8) throw ContractError("gen_factor_images needs side >= 8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto [rmin, rmax] = ellipse_radius_range(side);
  const double s = static_cast<double>(side);

  LabeledDataset ds{Array(Shape{n, 1, side, side}), std::vector<double>(n),
                    Array(Shape{n, 3}), {"ellipse", seed, "ellipse/v1"}};
  const std::size_t px = side * side;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rmin + (rmax - rmin) * unit(rng);
    // keep the ellipse at least one pixel away from every border
    const double mx = r + 1.0;
    const double my = kEllipseAspect * r + 1.0;
    const double cx = mx + (s - 2.0 * mx) * unit(rng);
    const double cy = my + (s - 2.0 * my) * unit(rng);
    const Array img = render_ellipse(side, cx, cy, r);
    std::copy(img.data().begin(), img.data().end(),
              ds.samples.data().begin() + static_cast<std::ptrdiff_t>(i * px));
    ds.factors->at(i, 0) = cx;
    ds.factors->at(i, 1) = cy;
    ds.factors->at(i, 2) = r;
    (*ds.targets)[i] = r;
  }
  return ds;
}

std::string encode_dataset(const LabeledDataset& ds) {
  ds.validate();
  io::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kVersion);
  std::uint8_t flags = 0;
  if (ds.targets) flags |= kHasTargets;
  if (ds.factors) flags |= kHasFactors;
  w.u8(flags);
  w.u64(ds.meta.seed);
  w.str(ds.meta.name);
  w.str(ds.meta.generator);
  w.u8(static_cast<std::uint8_t>(ds.samples.rank()));
  for (auto e : ds.samples.shape()) w.u64(e);
  if (ds.factors) w.u64(ds.factors->dim(1));
  for (double v : ds.samples.data()) w.f64(v);
  if (ds.targets)
    for (double v : *ds.targets) w.f64(v);
  if (ds.factors)
    for (double v : ds.factors->data()) w.f64(v);
  return w.buffer();
}

LabeledDataset decode_dataset(std::string_view bytes) {
  io::Reader r(bytes, "dataset");
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw FormatError("dataset: bad magic");
  const auto version = r.u16();
  if (version != kVersion)
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  const auto flags = r.u8();
  if (flags & ~(kHasTargets | kHasFactors)) throw FormatError("dataset: unknown flag bits");
  LabeledDataset ds;
  ds.meta.seed = r.u64();
  ds.meta.name = r.str();
  ds.meta.generator = r.str();
  const auto rank = r.u8();
  if (rank < 2) throw FormatError("dataset: sample rank must be >= 2");
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = r.u64();
    if (e == 0) throw FormatError("dataset: zero extent in shape table");
    if (count > (std::size_t{1} << 40) / e) throw FormatError("dataset: shape table too large");
    count *= e;
  }
  const std::size_t n = shape[0];
  std::size_t k = 0;
  if (flags & kHasFactors) {
    k = r.u64();
    if (k == 0 || k > (std::size_t{1} << 20)) throw FormatError("dataset: bad factor width");
  }
  const std::size_t expected =
      8 * (count + ((flags & kHasTargets) ? n : 0) + ((flags & kHasFactors) ? n * k : 0));
  if (r.remaining() != expected)
    throw FormatError("dataset: payload is " + std::to_string(r.remaining()) +
                      " bytes, shape table implies " + std::to_string(expected));

  std::vector<double> data(count);
  for (double& v : data) v = r.f64();
  ds.samples = Array(shape, std::move(data));
  if (flags & kHasTargets) {
    ds.targets.emplace(n);
    for (double& v : *ds.targets) v = r.f64();
  }
  if (flags & kHasFactors) {
    std::vector<double> f(n * k);
    for (double& v : f) v = r.f64();
    ds.factors = Array(Shape{n, k}, std::move(f));
  }
  r.expect_end();
  ds.validate();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  io::write_file(path, encode_dataset(ds));
}

LabeledDataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace vaetk

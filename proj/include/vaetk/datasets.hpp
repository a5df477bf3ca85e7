#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vaetk/array.hpp"

namespace vaetk {

struct DatasetMeta {
  std::string name;
  std::uint64_t seed = 0;
  std::string generator;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

/// Samples with optional per-sample scalar targets and ground-truth factors.
struct LabeledDataset {
  Array samples;                               // [n, sample_shape...]
  std::optional<std::vector<double>> targets;  // n values
  std::optional<Array> factors;                // [n, k]
  DatasetMeta meta;

  std::size_t size() const { return samples.dim(0); }
  Shape sample_shape() const { return Shape(samples.shape().begin() + 1, samples.shape().end()); }
  std::size_t sample_size() const { return samples.size() / size(); }

  // Rows `indices` of samples, stacked in the given order.
  Array gather(std::span<const std::size_t> indices) const;
  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

// Points (t cos t, t sin t) / (4 pi) plus N(0, noise_sigma^2) noise, with t
// uniform on [pi/2, 4 pi]. Factor column: t.
LabeledDataset gen_spiral(std::size_t n, double noise_sigma, std::uint64_t seed);
std::pair<double, double> spiral_point(double t);

inline constexpr double kEllipseAspect = 0.75;  // minor / major semi-axis

// side x side grayscale images of a filled, axis-aligned ellipse with
// semi-axes (radius, 0.75 radius) and a one-pixel soft edge. Factor columns:
// center_x, center_y, radius (pixel units); target: radius.
LabeledDataset gen_factor_images(std::size_t n, std::size_t side, std::uint64_t seed);
Array render_ellipse(std::size_t side, double center_x, double center_y, double radius);
// Sampling range of the radius factor for a given side.
std::pair<double, double> ellipse_radius_range(std::size_t side);

// "VAED" container: magic, u16 version, flag byte (bit0 targets, bit1
// factors), seed, name, generator id, sample extent table, factor width,
// then little-endian f64 payloads for samples, targets and factors.
std::string encode_dataset(const LabeledDataset& ds);
LabeledDataset decode_dataset(std::string_view bytes);
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace vaetk

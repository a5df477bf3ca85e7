#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "vaetk/datasets.hpp"
#include "vaetk/errors.hpp"

using namespace vaetk;

namespace {

constexpr double kPi = std::numbers::pi;

// Arc length of the normalized spiral from parameter 0 to t.
double spiral_arc(double t) {
  return (t * std::sqrt(1.0 + t * t) + std::asinh(t)) / 2.0 / (4.0 * kPi);
}

std::size_t foreground(const Array& img, std::size_t offset, std::size_t count) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < count; ++i)
    if (img[offset + i] > 0.5) ++n;
  return n;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("vaetk_test_datasets_" + name);
}

}  // namespace

TEST_CASE("noise-free spiral points sit at radius t / (4 pi)") {
  const auto ds = gen_spiral(1000, 0.0, 3);
  REQUIRE(ds.samples.shape() == Shape{1000, 2});
  REQUIRE(ds.factors.has_value());
  CHECK_FALSE(ds.targets.has_value());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double t = ds.factors->at(i, 0);
    CHECK(t >= kPi / 2.0);
    CHECK(t <= 4.0 * kPi);
    const double r = std::hypot(ds.samples.at(i, 0), ds.samples.at(i, 1));
    CHECK(r == doctest::Approx(t / (4.0 * kPi)).epsilon(1e-14));
    CHECK(r <= 1.0);
  }
}

TEST_CASE("spiral arms: Euclidean neighbours that are far apart along the curve") {
  const auto ds = gen_spiral(2000, 0.0, 4);
  double best_ratio = 0.0, best_euclid = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      const double ti = ds.factors->at(i, 0), tj = ds.factors->at(j, 0);
      if (std::abs(ti - tj) < kPi) continue;
      const double euclid =
          std::hypot(ds.samples.at(i, 0) - ds.samples.at(j, 0), ds.samples.at(i, 1) - ds.samples.at(j, 1));
      if (euclid > 0.55) continue;
      const double geodesic = std::abs(spiral_arc(ti) - spiral_arc(tj));
      if (geodesic / euclid > best_ratio) {
        best_ratio = geodesic / euclid;
        best_euclid = euclid;
      }
    }
  // adjacent arms are half a unit apart but several units apart along the curve
  CHECK(best_euclid <= 0.55);
  CHECK(best_ratio > 4.0);
}

TEST_CASE("spiral noise perturbs points around the curve") {
  const auto clean = gen_spiral(500, 0.0, 5);
  const auto noisy = gen_spiral(500, 0.05, 5);
  double sum2 = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const auto [x, y] = spiral_point(noisy.factors->at(i, 0));
    sum2 += (noisy.samples.at(i, 0) - x) * (noisy.samples.at(i, 0) - x) +
            (noisy.samples.at(i, 1) - y) * (noisy.samples.at(i, 1) - y);
  }
  CHECK(std::sqrt(sum2 / (2.0 * noisy.size())) == doctest::Approx(0.05).epsilon(0.1));
  CHECK_THROWS_AS(gen_spiral(0, 0.0, 1), ContractError);
  CHECK_THROWS_AS(gen_spiral(10, -1.0, 1), ContractError);
}

TEST_CASE("ellipse images: range, margins and re-synthesis from factors") {
  const std::size_t side = 16;
  const auto ds = gen_factor_images(300, side, 7);
  REQUIRE(ds.samples.shape() == Shape{300, 1, side, side});
  REQUIRE(ds.factors->shape() == Shape{300, 3});
  const auto [rmin, rmax] = ellipse_radius_range(side);
  for (double v : ds.samples.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double cx = ds.factors->at(i, 0), cy = ds.factors->at(i, 1), r = ds.factors->at(i, 2);
    CHECK((*ds.targets)[i] == r);
    CHECK(r >= rmin);
    CHECK(r <= rmax);
    CHECK(cx - r >= 1.0);
    CHECK(cx + r <= side - 1.0);
    CHECK(cy - kEllipseAspect * r >= 1.0);
    CHECK(cy + kEllipseAspect * r <= side - 1.0);
    const Array img = render_ellipse(side, cx, cy, r);
    CHECK(std::equal(img.data().begin(), img.data().end(), ds.samples.data().begin() + i * side * side));
  }
}

TEST_CASE("ellipse foreground is the set of pixel centres inside the ellipse") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double r = 2.4 + 2.4 * u(rng), cx = 5.0 + 6.0 * u(rng), cy = 5.0 + 6.0 * u(rng);
    const Array img = render_ellipse(16, cx, cy, r);
    for (std::size_t row = 0; row < 16; ++row)
      for (std::size_t col = 0; col < 16; ++col) {
        const double dx = (col + 0.5 - cx) / r, dy = (row + 0.5 - cy) / (kEllipseAspect * r);
        const bool inside = dx * dx + dy * dy < 1.0;
        if (std::abs(dx * dx + dy * dy - 1.0) > 1e-9) CHECK((img[row * 16 + col] > 0.5) == inside);
      }
  }
}

TEST_CASE("the smallest radius has the smallest foreground") {
  const std::size_t side = 16, px = side * side;
  const auto ds = gen_factor_images(500, side, 9);
  std::size_t smallest = 0;
  for (std::size_t i = 1; i < ds.size(); ++i)
    if (ds.factors->at(i, 2) < ds.factors->at(smallest, 2)) smallest = i;
  const std::size_t base = foreground(ds.samples, smallest * px, px);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.factors->at(i, 2) >= ds.factors->at(smallest, 2) + 1.0)
      CHECK(foreground(ds.samples, i * px, px) > base);

  const auto [rmin, rmax] = ellipse_radius_range(side);
  CHECK(foreground(render_ellipse(side, 8.0, 8.0, rmin), 0, px) <
        foreground(render_ellipse(side, 8.0, 8.0, rmax), 0, px));
}

TEST_CASE("the mean image is a centred, symmetric blob") {
  const std::size_t side = 16;
  const auto ds = gen_factor_images(10'000, side, 10);
  std::vector<double> mean(side * side, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += ds.samples[i * side * side + p];
  for (double& v : mean) v /= static_cast<double>(ds.size());
  auto at = [&](std::size_t r, std::size_t c) { return mean[r * side + c]; };

  const double centre = (at(7, 7) + at(7, 8) + at(8, 7) + at(8, 8)) / 4.0;
  CHECK(centre > 0.5);
  CHECK(at(0, 0) < 0.01);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      CHECK(at(r, c) <= centre + 0.01);  // sampling noise on the plateau
      CHECK(std::abs(at(r, c) - at(r, side - 1 - c)) < 0.02);
      CHECK(std::abs(at(r, c) - at(side - 1 - r, c)) < 0.02);
    }
  // monotone fall-off along the centre row
  for (std::size_t c = 8; c + 1 < side; ++c) CHECK(at(8, c + 1) <= at(8, c) + 0.01);
}

TEST_CASE("generators are pure functions of their parameters and seed") {
  CHECK(encode_dataset(gen_factor_images(50, 12, 3)) == encode_dataset(gen_factor_images(50, 12, 3)));
  CHECK(encode_dataset(gen_spiral(50, 0.1, 3)) == encode_dataset(gen_spiral(50, 0.1, 3)));
  CHECK_FALSE(gen_spiral(50, 0.1, 3) == gen_spiral(50, 0.1, 4));
  CHECK_THROWS_AS(gen_factor_images(10, 7, 1), ContractError);
}

TEST_CASE("VAED round trip") {
  auto ds = gen_factor_images(20, 8, 11);
  ds.samples[3] = 0.1 + 0.2;  // not exactly representable in decimal
  const auto path = temp_file("roundtrip.vaed");
  save_dataset(ds, path.string());
  const auto back = load_dataset(path.string());
  CHECK(back == ds);
  CHECK(back.meta.generator == "ellipse/v1");
  std::filesystem::remove(path);

  const auto spiral = gen_spiral(7, 0.0, 1);
  CHECK(decode_dataset(encode_dataset(spiral)) == spiral);
}

TEST_CASE("VAED absent targets") {
  auto ds = gen_factor_images(5, 8, 12);
  ds.targets.reset();
  const std::string bytes = encode_dataset(ds);
  CHECK((static_cast<unsigned char>(bytes[6]) & 1) == 0);
  CHECK((static_cast<unsigned char>(bytes[6]) & 2) == 2);
  const auto back = decode_dataset(bytes);
  CHECK_FALSE(back.targets.has_value());
  CHECK(back.factors.has_value());
  CHECK(back == ds);
}

TEST_CASE("VAED rejects malformed input") {
  const std::string good = encode_dataset(gen_spiral(4, 0.0, 2));
  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  bad = good;
  bad[4] = 9;  // version
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  CHECK_THROWS_AS(decode_dataset(good.substr(0, good.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_dataset(good + '\0'), FormatError);
  CHECK_THROWS_AS(decode_dataset(""), FormatError);
  CHECK_THROWS_AS(load_dataset(temp_file("does_not_exist.vaed").string()), FormatError);
}

TEST_CASE("dataset validation and gather") {
  auto ds = gen_spiral(5, 0.0, 3);
  const std::size_t idx[] = {4, 0, 4};
  const Array g = ds.gather(idx);
  CHECK(g.shape() == Shape{3, 2});
  CHECK(g.at(0, 1) == ds.samples.at(4, 1));
  CHECK(g.at(1, 0) == ds.samples.at(0, 0));
  ds.targets = std::vector<double>(4, 0.0);
  CHECK_THROWS_AS(ds.validate(), DimensionError);
}

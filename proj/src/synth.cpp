#include "triqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace triqa {

namespace fs = std::filesystem;

std::string_view to_string(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::gaussian_blur: return "gaussian_blur";
    case DistortionKind::additive_gaussian_noise: return "additive_gaussian_noise";
    case DistortionKind::contrast_scale: return "contrast_scale";
    case DistortionKind::pixel_quantize: return "pixel_quantize";
  }
  return "unknown";
}

DistortionKind parse_distortion_kind(std::string_view name) {
  for (auto kind : kAllDistortionKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw DataError("unknown distortion kind '" + std::string(name) + "'");
}

double proxy_mos(int severity) {
  if (severity < 0 || severity > kMaxSeverity) throw DataError("severity must be in 0..5");
  return 5.0 - 0.8 * severity;
}

double distortion_strength(DistortionKind kind, int severity) {
  static constexpr std::array<double, 6> kBlurSigma{0.0, 0.6, 1.0, 1.6, 2.4, 3.5};
  static constexpr std::array<double, 6> kNoiseSigma{0.0, 0.03, 0.07, 0.13, 0.22, 0.35};
  static constexpr std::array<double, 6> kContrastGain{1.0, 0.8, 0.62, 0.46, 0.32, 0.2};
  static constexpr std::array<double, 6> kQuantLevels{256, 24, 12, 7, 4, 2};
  if (severity < 0 || severity > kMaxSeverity) throw DataError("severity must be in 0..5");
  const auto s = static_cast<std::size_t>(severity);
  switch (kind) {
    case DistortionKind::gaussian_blur: return kBlurSigma[s];
    case DistortionKind::additive_gaussian_noise: return kNoiseSigma[s];
    case DistortionKind::contrast_scale: return kContrastGain[s];
    case DistortionKind::pixel_quantize: return kQuantLevels[s];
  }
  throw DataError("unknown distortion kind");
}

namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (len == 1) return 0;
  while (i < 0 || i >= len) i = i < 0 ? -i - 1 : 2 * len - i - 1;
  return static_cast<std::size_t>(i);
}

// Separable Gaussian blur with symmetric (half-sample) border reflection.
Tensor gaussian_blur(const Tensor& image, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (auto& v : kernel) v /= total;

  const Shape s = image.shape;
  Tensor tmp(s), out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
            acc += kernel[static_cast<std::size_t>(k + radius)] *
                   image.at(n, c, y, reflect(static_cast<std::ptrdiff_t>(x) + k, s.w));
          }
          tmp.at(n, c, y, x) = static_cast<float>(acc);
        }
      }
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
            acc += kernel[static_cast<std::size_t>(k + radius)] *
                   tmp.at(n, c, reflect(static_cast<std::ptrdiff_t>(y) + k, s.h), x);
          }
          out.at(n, c, y, x) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

float clamp_unit(double v) { return static_cast<float>(std::clamp(v, -1.0, 1.0)); }

}  // namespace

DistortedImage synth_distort(const Tensor& image, const DistortionSpec& spec, std::uint64_t noise_seed) {
  const double strength = distortion_strength(spec.kind, spec.severity);
  const double mos = proxy_mos(spec.severity);
  if (spec.severity == 0) return {image, mos};

  Tensor out = image;
  const Shape s = image.shape;
  switch (spec.kind) {
    case DistortionKind::gaussian_blur:
      out = gaussian_blur(image, strength);
      break;
    case DistortionKind::additive_gaussian_noise: {
      std::mt19937_64 rng(noise_seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (auto& v : out.data) v = clamp_unit(static_cast<double>(v) + strength * normal(rng));
      break;
    }
    case DistortionKind::contrast_scale:
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t base = (n * s.c + c) * s.plane();
          double mean = 0.0;
          for (std::size_t i = 0; i < s.plane(); ++i) mean += image.data[base + i];
          mean /= static_cast<double>(s.plane());
          for (std::size_t i = 0; i < s.plane(); ++i) {
            out.data[base + i] = clamp_unit(mean + strength * (static_cast<double>(image.data[base + i]) - mean));
          }
        }
      }
      break;
    case DistortionKind::pixel_quantize: {
      const double steps = strength - 1.0;
      for (auto& v : out.data) {
        const double unit = (static_cast<double>(v) + 1.0) / 2.0;
        v = clamp_unit(std::round(unit * steps) / steps * 2.0 - 1.0);
      }
      break;
    }
  }
  return {std::move(out), mos};
}

Tensor make_reference_image(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double pi = std::numbers::pi;
  const double extent = static_cast<double>(size);

  Tensor ramp({1, 3, size, size}), checker({1, 3, size, size}), noise({1, 3, size, size});

  const double angle = unit(rng) * 2.0 * pi;
  std::array<double, 3> ramp_lo{}, ramp_hi{};
  for (std::size_t c = 0; c < 3; ++c) {
    ramp_lo[c] = unit(rng) * 2.0 - 1.0;
    ramp_hi[c] = unit(rng) * 2.0 - 1.0;
  }
  static constexpr std::array<int, 5> kPeriods{4, 6, 8, 12, 16};
  const int period = kPeriods[static_cast<std::size_t>(rng() % kPeriods.size())];
  std::array<double, 3> check_a{}, check_b{};
  for (std::size_t c = 0; c < 3; ++c) {
    check_a[c] = unit(rng) * 2.0 - 1.0;
    check_b[c] = unit(rng) * 2.0 - 1.0;
  }
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double t = 0.5 + ((static_cast<double>(x) / extent - 0.5) * std::cos(angle) +
                              (static_cast<double>(y) / extent - 0.5) * std::sin(angle));
      const bool odd = ((x / static_cast<std::size_t>(period)) + (y / static_cast<std::size_t>(period))) % 2 == 1;
      for (std::size_t c = 0; c < 3; ++c) {
        ramp.at(0, c, y, x) = static_cast<float>(ramp_lo[c] + (ramp_hi[c] - ramp_lo[c]) * t);
        checker.at(0, c, y, x) = static_cast<float>(odd ? check_a[c] : check_b[c]);
      }
    }
  }
  for (auto& v : noise.data) v = static_cast<float>(normal(rng));
  noise = gaussian_blur(noise, 1.0 + 2.0 * unit(rng));
  float peak = 1e-6f;
  for (float v : noise.data) peak = std::max(peak, std::abs(v));
  for (auto& v : noise.data) v /= peak;

  const double w_ramp = 0.3 + 0.7 * unit(rng);
  const double w_check = 0.2 + 0.6 * unit(rng);
  const double w_noise = 0.2 + 0.6 * unit(rng);
  Tensor out({1, 3, size, size});
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(w_ramp * ramp.data[i] + w_check * checker.data[i] + w_noise * noise.data[i]);
  }

  const int disks = 2 + static_cast<int>(rng() % 4);
  for (int d = 0; d < disks; ++d) {
    const double cx = unit(rng) * extent, cy = unit(rng) * extent;
    const double radius = extent * (0.05 + 0.15 * unit(rng));
    std::array<double, 3> color{};
    for (auto& v : color) v = unit(rng) * 2.0 - 1.0;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        if (dx * dx + dy * dy > radius * radius) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          out.at(0, c, y, x) = static_cast<float>(0.5 * out.at(0, c, y, x) + 0.5 * color[c]);
        }
      }
    }
  }

  float lo = out.data.front(), hi = out.data.front();
  for (float v : out.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = std::max(hi - lo, 1e-6f);
  // Leave head-room so contrast and noise distortions are not clipped away.
  for (auto& v : out.data) v = -0.9f + 1.8f * (v - lo) / range;
  return out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string padded(int value) {
  std::string s = std::to_string(value);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace

Dataset make_synthetic_benchmark(const BenchmarkOptions& options) {
  if (options.n_references < 2) throw DataError("synthetic benchmark needs at least 2 references");
  if (options.kinds.empty()) throw DataError("synthetic benchmark needs at least one distortion kind");
  if (options.image_size == 0) throw DataError("synthetic benchmark image size must be positive");
  std::error_code ec;
  fs::create_directories(options.out_dir / "images", ec);
  if (ec) throw DataError("cannot create '" + (options.out_dir / "images").string() + "': " + ec.message());

  Dataset ds;
  ds.base_dir = options.out_dir;
  for (int r = 0; r < options.n_references; ++r) {
    const auto ref_seed = mix_seed(options.seed, static_cast<std::uint64_t>(r));
    const Tensor reference = make_reference_image(options.image_size, ref_seed);
    const std::string ref_rel = "images/ref_" + padded(r) + ".ppm";
    save_ppm(options.out_dir / ref_rel, reference);
    for (auto kind : options.kinds) {
      for (int severity = 1; severity <= kMaxSeverity; ++severity) {
        const auto noise_seed = mix_seed(ref_seed, static_cast<std::uint64_t>(kind) * 16 + static_cast<std::uint64_t>(severity));
        const auto distorted = synth_distort(reference, {kind, severity}, noise_seed);
        const std::string rel = "images/ref_" + padded(r) + "_" + std::string(to_string(kind)) + "_s" +
                                std::to_string(severity) + ".ppm";
        save_ppm(options.out_dir / rel, distorted.image);
        ds.records.push_back({ref_rel, rel, distorted.proxy_mos});
      }
    }
  }
  ds.update_label_range();
  write_manifest(options.out_dir / "manifest.csv", ds);
  return load_manifest(options.out_dir / "manifest.csv");
}

}  // namespace triqa

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "triqa/data.hpp"

namespace triqa {

enum class DistortionKind { gaussian_blur, additive_gaussian_noise, contrast_scale, pixel_quantize };

inline constexpr std::array<DistortionKind, 4> kAllDistortionKinds{
    DistortionKind::gaussian_blur, DistortionKind::additive_gaussian_noise, DistortionKind::contrast_scale,
    DistortionKind::pixel_quantize};
inline constexpr int kMaxSeverity = 5;

std::string_view to_string(DistortionKind kind);
/// Throws DataError for names outside the four supported kinds.
DistortionKind parse_distortion_kind(std::string_view name);

struct DistortionSpec {
  DistortionKind kind = DistortionKind::gaussian_blur;
  int severity = 0;
};

/// Label for a severity level: 5 - 0.8 * severity, so 0 -> 5.0 and 5 -> 1.0.
double proxy_mos(int severity);

/// Strength parameter per level (index = severity):
///   gaussian_blur            sigma in pixels      0, 0.6, 1.0, 1.6, 2.4, 3.5
///   additive_gaussian_noise  sigma, [-1,1] units   0, 0.03, 0.07, 0.13, 0.22, 0.35
///   contrast_scale           gain about the mean  1, 0.8, 0.62, 0.46, 0.32, 0.2
///   pixel_quantize           levels per channel   256, 24, 12, 7, 4, 2
double distortion_strength(DistortionKind kind, int severity);

struct DistortedImage {
  Tensor image;
  double proxy_mos = 5.0;
};

/// Applies one distortion to a normalized (1, 3, h, w) image. Severity 0
/// returns the input unchanged. `noise_seed` drives the noise kind only.
DistortedImage synth_distort(const Tensor& image, const DistortionSpec& spec, std::uint64_t noise_seed = 0);

/// Procedural reference: a color ramp, a checkerboard, smoothed noise and a
/// few disks blended with seeded weights.
Tensor make_reference_image(std::size_t size, std::uint64_t seed);

struct BenchmarkOptions {
  std::filesystem::path out_dir;
  int n_references = 4;
  std::vector<DistortionKind> kinds{kAllDistortionKinds.begin(), kAllDistortionKinds.end()};
  std::uint64_t seed = 0;
  std::size_t image_size = 96;
};

/// Writes `images/*.ppm` and `manifest.csv` under out_dir: one record per
/// (reference, kind, severity 1..5). Returns the dataset as loaded back.
Dataset make_synthetic_benchmark(const BenchmarkOptions& options);

}  // namespace triqa

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "triqa/tensor.hpp"

namespace triqa {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImagePairRecord {
  std::string reference_path;
  std::string distorted_path;
  double mos = 0.0;
  friend bool operator==(const ImagePairRecord&, const ImagePairRecord&) = default;
};

struct Dataset {
  std::vector<ImagePairRecord> records;
  /// (min, max) of the MOS labels; (0, 0) when empty.
  std::pair<double, double> label_range{0.0, 0.0};
  /// Relative record paths resolve against this directory.
  std::filesystem::path base_dir;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::filesystem::path resolve(const std::string& path) const;
  void update_label_range();
  /// Throws DataError when there is nothing to train or evaluate on.
  void require_non_empty(std::string_view purpose) const;
};

/// Reads a `ref_path,dist_path,mos` CSV. Quoted fields follow RFC 4180.
Dataset load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Dataset& dataset);

/// CSV field quoting helpers shared by the manifest and prediction files.
std::string csv_escape(std::string_view field);
std::vector<std::string> csv_split(std::string_view line, std::size_t line_number);
/// Shortest decimal text that parses back to the same double.
std::string format_real(double value);
double parse_real(std::string_view text, std::size_t line_number, std::string_view field);

// Pixel values map [0, 255] -> [-1, 1] via (x / 255 - 0.5) / 0.5.
float normalize_level(std::uint8_t level);
std::uint8_t denormalize_level(float value);

/// Decodes binary PPM (P6, maxval 255) or 8-bit PNG into a (1, 3, h, w) tensor.
Tensor load_image(const std::filesystem::path& path);
/// Writes a (1, 3, h, w) normalized tensor as binary PPM.
void save_ppm(const std::filesystem::path& path, const Tensor& image);
/// Bilinear resampling with half-pixel centers; identity when sizes match.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool group_by_reference = true;
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// Deterministic train/validation split. With grouping, whole reference
/// images are assigned to one side: floor(train_fraction * groups) go to train.
std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec);

struct FlipPattern {
  bool horizontal = false;
  bool vertical = false;
};

FlipPattern draw_flip(std::mt19937_64& rng);
Tensor apply_flip(const Tensor& image, FlipPattern pattern);
/// Draws one flip pattern and applies it to both images.
std::pair<Tensor, Tensor> augment_flip(const Tensor& query, const Tensor& reference, std::mt19937_64& rng);

}  // namespace triqa

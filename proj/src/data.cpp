#include "triqa/data.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

namespace triqa {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest

fs::path Dataset::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

void Dataset::update_label_range() {
  if (records.empty()) {
    label_range = {0.0, 0.0};
    return;
  }
  const auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                            [](const auto& a, const auto& b) { return a.mos < b.mos; });
  label_range = {lo->mos, hi->mos};
}

void Dataset::require_non_empty(std::string_view purpose) const {
  if (records.empty()) throw DataError("dataset is empty; nothing to use for " + std::string(purpose));
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::vector<std::string> csv_split(std::string_view line, std::size_t line_number) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(ch);
      }
    } else if (ch == '"' && current.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(current));
      current.clear();
      was_quoted = false;
    } else {
      current.push_back(ch);
    }
  }
  if (quoted) throw DataError("line " + std::to_string(line_number) + ": unterminated quoted field");
  fields.push_back(std::move(current));
  return fields;
}

std::string format_real(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_real(std::string_view text, std::size_t line_number, std::string_view field) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw DataError("line " + std::to_string(line_number) + ": " + std::string(field) + " is not a finite number: '" +
                    std::string(text) + "'");
  }
  return value;
}

Dataset load_manifest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read manifest '" + path.string() + "'");
  Dataset ds;
  ds.base_dir = path.parent_path();
  std::string line;
  std::size_t line_number = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_number == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!header_seen) {
      if (line != "ref_path,dist_path,mos") {
        throw DataError("line " + std::to_string(line_number) + ": expected header 'ref_path,dist_path,mos' in '" +
                        path.string() + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = csv_split(line, line_number);
    if (fields.size() != 3) {
      throw DataError("line " + std::to_string(line_number) + ": expected 3 fields, got " +
                      std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw DataError("line " + std::to_string(line_number) + ": empty image path");
    }
    ds.records.push_back({fields[0], fields[1], parse_real(fields[2], line_number, "mos")});
  }
  if (!header_seen) throw DataError("line 1: missing header in '" + path.string() + "'");
  ds.update_label_range();
  return ds;
}

void write_manifest(const fs::path& path, const Dataset& dataset) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write manifest '" + path.string() + "'");
  os << "ref_path,dist_path,mos\n";
  for (const auto& r : dataset.records) {
    os << csv_escape(r.reference_path) << ',' << csv_escape(r.distorted_path) << ',' << format_real(r.mos) << '\n';
  }
  if (!os) throw DataError("write failed for manifest '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Images

float normalize_level(std::uint8_t level) { return (static_cast<float>(level) / 255.0f - 0.5f) / 0.5f; }

std::uint8_t denormalize_level(float value) {
  const float scaled = std::round((value * 0.5f + 0.5f) * 255.0f);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
}

namespace {

Tensor from_interleaved_rgb(const std::uint8_t* pixels, std::size_t height, std::size_t width) {
  Tensor out({1, 3, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(0, c, y, x) = normalize_level(pixels[(y * width + x) * 3 + c]);
    }
  }
  return out;
}

// Reads the next PPM header token, skipping whitespace and '#' comments.
std::string ppm_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char ch = bytes[pos];
    if (ch == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
  return bytes.substr(start, pos - start);
}

Tensor decode_ppm(const std::string& bytes, const fs::path& path) {
  std::size_t pos = 2;
  std::size_t dims[3] = {0, 0, 0};
  for (auto& d : dims) {
    const std::string tok = ppm_token(bytes, pos);
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw DataError("'" + path.string() + "': malformed PPM header");
    }
  }
  const auto [width, height, maxval] = dims;
  if (maxval != 255) throw DataError("'" + path.string() + "': unsupported PPM maxval " + std::to_string(maxval));
  if (width == 0 || height == 0) throw DataError("'" + path.string() + "': empty PPM image");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = width * height * 3;
  if (pos > bytes.size() || bytes.size() - pos < need) {
    throw DataError("'" + path.string() + "': truncated PPM payload");
  }
  return from_interleaved_rgb(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos), height, width);
}

Tensor decode_png(const std::string& bytes, const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError("'" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("'" + path.string() + "': " + msg);
  }
  return from_interleaved_rgb(pixels.data(), image.height, image.width);
}

}  // namespace

Tensor load_image(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read image '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, reinterpret_cast<const unsigned char*>(bytes.data()))) {
    return decode_png(bytes, path);
  }
  throw DataError("'" + path.string() + "': unsupported image format (expected binary PPM or PNG)");
}

void save_ppm(const fs::path& path, const Tensor& image) {
  const Shape s = image.shape;
  if (s.n != 1 || s.c != 3) throw ShapeError("save_ppm: expected (1, 3, h, w), got " + s.str());
  std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + s.h * s.w * 3);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out[header + (y * s.w + x) * 3 + c] = static_cast<char>(denormalize_level(image.at(0, c, y, x)));
      }
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write image '" + path.string() + "'");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw DataError("write failed for image '" + path.string() + "'");
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  const Shape s = image.shape;
  if (s.h == height && s.w == width) return image;
  if (height == 0 || width == 0 || s.h == 0 || s.w == 0) throw ShapeError("resize_bilinear: empty extent");
  Tensor out({s.n, s.c, height, width});
  const double sy = static_cast<double>(s.h) / static_cast<double>(height);
  const double sx = static_cast<double>(s.w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, s.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, s.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const double top = image.at(n, c, y0, x0) * (1.0 - wx) + image.at(n, c, y0, x1) * wx;
          const double bottom = image.at(n, c, y1, x0) * (1.0 - wx) + image.at(n, c, y1, x1) * wx;
          out.at(n, c, y, x) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw DataError("split: train_fraction must lie strictly between 0 and 1");
  }
  // Group key per record: the reference path, or the record index when ungrouped.
  std::vector<std::size_t> group_of(dataset.size());
  std::size_t groups = 0;
  if (spec.group_by_reference) {
    std::map<std::string, std::size_t> ids;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      auto [it, inserted] = ids.try_emplace(dataset.records[i].reference_path, groups);
      if (inserted) ++groups;
      group_of[i] = it->second;
    }
  } else {
    for (std::size_t i = 0; i < dataset.size(); ++i) group_of[i] = i;
    groups = dataset.size();
  }
  const auto train_groups = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(groups) + 1e-9));
  if (train_groups == 0 || train_groups >= groups) {
    throw DataError("split: degenerate split of " + std::to_string(groups) + (spec.group_by_reference ? " references" : " records") +
                    " at train_fraction " + format_real(spec.train_fraction));
  }
  std::vector<std::size_t> order(groups);
  for (std::size_t g = 0; g < groups; ++g) order[g] = g;
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> in_train(groups, false);
  for (std::size_t k = 0; k < train_groups; ++k) in_train[order[k]] = true;

  Dataset train, val;
  train.base_dir = val.base_dir = dataset.base_dir;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (in_train[group_of[i]] ? train : val).records.push_back(dataset.records[i]);
  }
  train.update_label_range();
  val.update_label_range();
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Flip augmentation

FlipPattern draw_flip(std::mt19937_64& rng) {
  const auto bits = rng();
  return {(bits & 1U) != 0, (bits & 2U) != 0};
}

Tensor apply_flip(const Tensor& image, FlipPattern pattern) {
  if (!pattern.horizontal && !pattern.vertical) return image;
  const Shape s = image.shape;
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        const std::size_t sy = pattern.vertical ? s.h - 1 - y : y;
        for (std::size_t x = 0; x < s.w; ++x) {
          const std::size_t sx = pattern.horizontal ? s.w - 1 - x : x;
          out.at(n, c, y, x) = image.at(n, c, sy, sx);
        }
      }
    }
  }
  return out;
}

std::pair<Tensor, Tensor> augment_flip(const Tensor& query, const Tensor& reference, std::mt19937_64& rng) {
  if (query.shape != reference.shape) {
    throw ShapeError("augment_flip: shape mismatch " + query.shape.str() + " vs " + reference.shape.str());
  }
  const FlipPattern pattern = draw_flip(rng);
  return {apply_flip(query, pattern), apply_flip(reference, pattern)};
}

}  // namespace triqa

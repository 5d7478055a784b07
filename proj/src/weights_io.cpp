#include "triqa/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace triqa {

namespace {

using json = nlohmann::json;

static_assert(sizeof(float) == 4);

void append_le(std::string& out, const std::vector<float>& values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  std::memcpy(out.data() + start, values.data(), values.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = start; i < out.size(); i += 4) {
      std::swap(out[i], out[i + 3]);
      std::swap(out[i + 1], out[i + 2]);
    }
  }
}

void read_le(const char* src, std::vector<float>& values) {
  std::memcpy(values.data(), src, values.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(values.data());
    for (std::size_t i = 0; i < values.size() * 4; i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
}

}  // namespace

std::string encode_weights(const std::vector<NamedTensor>& entries) {
  json header;
  header["format_version"] = kWeightsFormatVersion;
  header["entries"] = json::array();
  std::set<std::string> names;
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) throw WeightsFormatError("duplicate tensor name '" + e.name + "'");
    const auto& s = e.tensor.shape;
    const std::uint64_t length = e.tensor.numel() * 4;
    header["entries"].push_back({{"name", e.name},
                                 {"shape", {s.n, s.c, s.h, s.w}},
                                 {"dtype", "f32"},
                                 {"byte_offset", offset},
                                 {"byte_length", length}});
    offset += length;
  }
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + offset);
  for (const auto& e : entries) append_le(out, e.tensor.data);
  return out;
}

std::vector<NamedTensor> decode_weights(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw WeightsFormatError("weights: missing header terminator");
  json header;
  try {
    header = json::parse(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(newline));
  } catch (const json::exception& ex) {
    throw WeightsFormatError(std::string("weights: malformed header: ") + ex.what());
  }
  if (!header.is_object() || header.value("format_version", -1) != kWeightsFormatVersion) {
    throw WeightsFormatError("weights: unsupported format_version");
  }
  const std::size_t payload_start = newline + 1;
  const std::size_t payload_size = bytes.size() - payload_start;
  std::vector<NamedTensor> out;
  try {
    for (const auto& entry : header.at("entries")) {
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw WeightsFormatError("weights: unsupported dtype for '" + entry.at("name").get<std::string>() + "'");
      }
      const auto dims = entry.at("shape").get<std::vector<std::size_t>>();
      if (dims.size() != 4) throw WeightsFormatError("weights: shape must have 4 dims");
      const Shape shape{dims[0], dims[1], dims[2], dims[3]};
      const auto offset = entry.at("byte_offset").get<std::uint64_t>();
      const auto length = entry.at("byte_length").get<std::uint64_t>();
      if (length != shape.numel() * 4 || offset > payload_size || length > payload_size - offset) {
        throw WeightsFormatError("weights: payload range invalid for '" + entry.at("name").get<std::string>() + "'");
      }
      NamedTensor nt{entry.at("name").get<std::string>(), Tensor(shape)};
      read_le(bytes.data() + payload_start + offset, nt.tensor.data);
      out.push_back(std::move(nt));
    }
  } catch (const json::exception& ex) {
    throw WeightsFormatError(std::string("weights: malformed entry: ") + ex.what());
  }
  return out;
}

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const std::string bytes = encode_weights(entries);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw WeightsFormatError("weights: cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw WeightsFormatError("weights: write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightsFormatError("weights: cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

}  // namespace triqa

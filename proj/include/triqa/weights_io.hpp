#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "triqa/tensor.hpp"

namespace triqa {

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr int kWeightsFormatVersion = 1;

// Container layout: one line of compact JSON
//   {"format_version":1,"entries":[{"name","shape":[n,c,h,w],"dtype":"f32",
//     "byte_offset","byte_length"}, ...]}
// terminated by '\n', then the raw little-endian f32 payloads. Offsets are
// relative to the first byte after the newline.

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

std::string encode_weights(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> decode_weights(const std::string& bytes);

}  // namespace triqa

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cforge/error.hpp"
#include "cforge/types.hpp"

namespace cforge {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "payload codecs assume a little-endian host");

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

json read_json_file(const std::filesystem::path& path);

/// Appends the entries of `m` (row-major order) to `out` as little-endian f32.
template <typename Derived>
void append_f32(std::string& out, const Eigen::DenseBase<Derived>& m) {
  const auto start = out.size();
  out.resize(start + static_cast<std::size_t>(m.size()) * sizeof(float));
  char* dst = out.data() + start;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      std::memcpy(dst, &f, sizeof f);
      dst += sizeof f;
    }
  }
}

/// Reads rows*cols little-endian f32 values starting at `offset`, widened to double.
RowMatrix<double> read_f32_matrix(std::string_view payload, std::size_t offset, Eigen::Index rows,
                                  Eigen::Index cols);

/// Rounds every entry through f32, i.e. the precision tensors are stored at.
template <typename Derived>
RowMatrix<double> round_to_f32(const Eigen::DenseBase<Derived>& m) {
  return m.derived().template cast<float>().template cast<double>();
}

// A single-line JSON manifest, a newline, then a raw payload. Used for concept
// files and for encoder files written without a sibling payload.
struct TensorContainer {
  json manifest;
  std::string payload;
};

std::string encode_container(const TensorContainer& c);
TensorContainer decode_container(std::string_view bytes, const std::string& what);

}  // namespace cforge

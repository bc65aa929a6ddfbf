#include "cforge/io.hpp"

#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include <openssl/evp.h>

namespace cforge {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
}

RowMatrix<double> read_f32_matrix(std::string_view payload, std::size_t offset, Eigen::Index rows,
                                  Eigen::Index cols) {
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  if (offset > payload.size() || payload.size() - offset < count * sizeof(float)) {
    throw MalformedFile("payload too short for a " + std::to_string(rows) + "x" +
                        std::to_string(cols) + " tensor");
  }
  RowMatrix<double> m(rows, cols);
  const char* src = payload.data() + offset;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      float f;
      std::memcpy(&f, src, sizeof f);
      src += sizeof f;
      m(r, c) = static_cast<double>(f);
    }
  }
  return m;
}

std::string encode_container(const TensorContainer& c) {
  json manifest = c.manifest;
  manifest["payload_bytes"] = c.payload.size();
  std::string out = manifest.dump();
  out.push_back('\n');
  out += c.payload;
  return out;
}

TensorContainer decode_container(std::string_view bytes, const std::string& what) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw MalformedFile(what + ": missing manifest line");
  TensorContainer c;
  try {
    c.manifest = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw MalformedFile(what + ": bad manifest: " + e.what());
  }
  if (!c.manifest.is_object() || !c.manifest.contains("payload_bytes")) {
    throw MalformedFile(what + ": manifest lacks payload_bytes");
  }
  c.payload = std::string(bytes.substr(nl + 1));
  const auto expected = c.manifest["payload_bytes"].get<std::size_t>();
  if (c.payload.size() != expected) {
    throw MalformedFile(what + ": payload is " + std::to_string(c.payload.size()) +
                        " bytes, manifest says " + std::to_string(expected));
  }
  return c;
}

}  // namespace cforge

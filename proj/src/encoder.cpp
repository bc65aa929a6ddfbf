#include "cforge/encoder.hpp"

#include <cstring>

namespace cforge {

namespace fs = std::filesystem;

namespace {

constexpr int kEncoderFormatVersion = 1;

void append_u64(std::string& out, std::uint64_t x) {
  char buf[8];
  std::memcpy(buf, &x, 8);
  out.append(buf, 8);
}

std::string fingerprint_of(EncoderVariant variant, const RowMatrix<double>& tokens,
                           const RowMatrix<double>& positions, double mix_weight) {
  std::string canon = "cforge-encoder-v1";
  canon.push_back('\0');
  canon += to_string(variant);
  canon.push_back('\0');
  append_u64(canon, static_cast<std::uint64_t>(positions.rows()));
  append_u64(canon, static_cast<std::uint64_t>(tokens.cols()));
  append_u64(canon, static_cast<std::uint64_t>(tokens.rows()));
  append_u64(canon, std::bit_cast<std::uint64_t>(mix_weight));
  append_f32(canon, tokens);
  append_f32(canon, positions);
  return sha256_hex(canon);
}

// h_i = (1 - w) e_i + w * mean(e_0..e_i), in place.
void mix_rows(const EncoderParams& params, Embedding& rows) {
  if (params.variant() == EncoderVariant::table_only) return;
  const double w = params.mix_weight();
  if (w == 0.0) return;
  Vec running = Vec::Zero(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    running += rows.row(i).transpose();
    rows.row(i) = (1.0 - w) * rows.row(i) + (w / static_cast<double>(i + 1)) * running.transpose();
  }
}

void check_shape(const EncoderParams& params, const Embedding& m, const char* what) {
  if (m.rows() != params.context_length() || m.cols() != params.embed_dim()) {
    throw DataError(std::string(what) + " has shape " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", encoder expects " +
                    std::to_string(params.context_length()) + "x" +
                    std::to_string(params.embed_dim()));
  }
}

}  // namespace

std::string to_string(EncoderVariant v) {
  return v == EncoderVariant::reference ? "reference" : "table_only";
}

EncoderVariant parse_encoder_variant(const std::string& s) {
  if (s == "reference") return EncoderVariant::reference;
  if (s == "table_only") return EncoderVariant::table_only;
  throw DataError("unknown encoder variant '" + s + "'");
}

EncoderParams::EncoderParams(EncoderVariant variant, RowMatrix<double> token_table,
                             RowMatrix<double> positional_table, double mix_weight)
    : variant_(variant),
      token_table_(std::move(token_table)),
      positional_table_(std::move(positional_table)),
      mix_weight_(mix_weight) {
  if (token_table_.rows() < 1 || token_table_.cols() < 1) throw DataError("empty token table");
  if (positional_table_.cols() != token_table_.cols()) {
    throw DataError("token and positional tables disagree on embed_dim");
  }
  if (positional_table_.rows() < 3) throw DataError("context length must be at least 3");
  if (!all_finite(token_table_) || !all_finite(positional_table_)) {
    throw DataError("encoder tables contain non-finite values");
  }
  if (!(mix_weight_ >= 0.0 && mix_weight_ <= 1.0)) throw DataError("mix_weight must lie in [0, 1]");
  fingerprint_ = fingerprint_of(variant_, token_table_, positional_table_, mix_weight_);
}

void save_encoder(const EncoderParams& params, const fs::path& path) {
  const auto L = params.context_length();
  const auto d = params.embed_dim();
  const auto V = params.vocab_size();
  fs::path payload_path = path;
  payload_path.replace_extension(".f32");
  std::string payload;
  append_f32(payload, params.token_table());
  append_f32(payload, params.positional_table());
  json manifest = {
      {"format", "cforge-encoder"},
      {"version", kEncoderFormatVersion},
      {"variant", to_string(params.variant())},
      {"L", L},
      {"d", d},
      {"V", V},
      {"mix_weight", params.mix_weight()},
      {"dtype", "f32"},
      {"byte_order", "little"},
      {"payload_file", payload_path.filename().string()},
      {"payload_bytes", payload.size()},
      {"offsets",
       {{"token_table", 0},
        {"positional_table", static_cast<std::size_t>(V) * d * sizeof(float)}}},
      {"fingerprint", params.fingerprint()},
  };
  write_file_atomic(payload_path, payload);
  write_file_atomic(path, manifest.dump(2) + "\n");
}

EncoderParams load_encoder(const fs::path& path) {
  const std::string bytes = read_file(path);
  json manifest;
  std::string payload;
  try {
    manifest = json::parse(bytes);
  } catch (const json::exception&) {
    // Not a bare manifest: try the inline container form.
    auto c = decode_container(bytes, path.string());
    manifest = std::move(c.manifest);
    payload = std::move(c.payload);
  }
  try {
    if (manifest.value("version", 0) != kEncoderFormatVersion) {
      throw MalformedFile(path.string() + ": unsupported encoder format version");
    }
    if (manifest.value("dtype", "f32") != "f32") throw MalformedFile(path.string() + ": dtype must be f32");
    if (manifest.contains("payload_file")) {
      payload = read_file(path.parent_path() / manifest.at("payload_file").get<std::string>());
      if (manifest.contains("payload_bytes") &&
          payload.size() != manifest.at("payload_bytes").get<std::size_t>()) {
        throw MalformedFile(path.string() + ": payload size disagrees with manifest");
      }
    }
    const auto L = manifest.at("L").get<Eigen::Index>();
    const auto d = manifest.at("d").get<Eigen::Index>();
    const auto V = manifest.at("V").get<Eigen::Index>();
    if (L <= 0 || d <= 0 || V <= 0) throw MalformedFile(path.string() + ": non-positive dimension");
    const std::size_t tok_off = manifest.at("offsets").at("token_table").get<std::size_t>();
    const std::size_t pos_off = manifest.at("offsets").at("positional_table").get<std::size_t>();
    const std::size_t expected = static_cast<std::size_t>((V + L) * d) * sizeof(float);
    if (payload.size() != expected) {
      throw MalformedFile(path.string() + ": payload is " + std::to_string(payload.size()) +
                          " bytes, expected " + std::to_string(expected));
    }
    auto tokens = read_f32_matrix(payload, tok_off, V, d);
    auto positions = read_f32_matrix(payload, pos_off, L, d);
    EncoderParams params(parse_encoder_variant(manifest.at("variant").get<std::string>()),
                         std::move(tokens), std::move(positions),
                         manifest.value("mix_weight", 0.0));
    if (manifest.contains("fingerprint") &&
        manifest.at("fingerprint").get<std::string>() != params.fingerprint()) {
      throw FingerprintMismatch(path.string() + ": stored fingerprint does not match tables");
    }
    return params;
  } catch (const json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
}

namespace {

void lookup_rows(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> ids,
                 int k_slot, Embedding& out) {
  const int L = params.context_length();
  if (static_cast<int>(v.size()) != params.vocab_size()) {
    throw DataError("vocabulary size " + std::to_string(v.size()) + " != encoder V " +
                    std::to_string(params.vocab_size()));
  }
  if (k_slot < 1 || k_slot > L - 2) {
    throw DataError("slot length " + std::to_string(k_slot) + " outside [1, " +
                    std::to_string(L - 2) + "]");
  }
  if (static_cast<int>(ids.size()) > k_slot) throw DataError("prompt exceeds slot length");
  const auto& tokens = params.token_table();
  const auto& sp = v.special();
  out.resize(L, params.embed_dim());
  const auto n = static_cast<Eigen::Index>(ids.size());
  out.row(0) = tokens.row(sp.bos);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TokenId id = ids[static_cast<std::size_t>(i)];
    if (!v.in_range(id)) throw DataError("token id " + std::to_string(id) + " out of range");
    out.row(i + 1) = tokens.row(id);
  }
  out.row(n + 1) = tokens.row(sp.eos);
  for (Eigen::Index i = n + 2; i < L; ++i) out.row(i) = tokens.row(sp.pad);
  out += params.positional_table();
}

}  // namespace

Embedding embed_rows(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> ids,
                     int k_slot) {
  Embedding out;
  lookup_rows(params, v, ids, k_slot, out);
  return out;
}

void encode_into(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> ids,
                 int k_slot, Embedding& out) {
  lookup_rows(params, v, ids, k_slot, out);
  mix_rows(params, out);
}

Embedding encode(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> ids,
                 int k_slot) {
  Embedding out;
  encode_into(params, v, ids, k_slot, out);
  return out;
}

Embedding encode_soft(const EncoderParams& params, const Embedding& soft_rows) {
  check_shape(params, soft_rows, "soft rows");
  if (!all_finite(soft_rows)) throw DataError("soft rows contain non-finite values");
  Embedding out = soft_rows;
  mix_rows(params, out);
  return out;
}

Embedding grad_soft(const EncoderParams& params, const Embedding& soft_rows,
                    const Embedding& target) {
  check_shape(params, target, "target");
  const Embedding residual = encode_soft(params, soft_rows) - target;
  if (params.variant() == EncoderVariant::table_only || params.mix_weight() == 0.0) {
    return 2.0 * residual;
  }
  // Adjoint of the causal mean: row j collects residual_i / (i+1) for all i >= j.
  const double w = params.mix_weight();
  Embedding grad(residual.rows(), residual.cols());
  Vec suffix = Vec::Zero(residual.cols());
  for (Eigen::Index j = residual.rows() - 1; j >= 0; --j) {
    suffix += residual.row(j).transpose() / static_cast<double>(j + 1);
    grad.row(j) = 2.0 * ((1.0 - w) * residual.row(j) + w * suffix.transpose());
  }
  return grad;
}

ExportBundle load_export(const fs::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  try {
    for (const auto& [name, digest] : manifest.at("sha256").items()) {
      const std::string actual = sha256_file(dir / name);
      if (actual != digest.get<std::string>()) {
        throw FingerprintMismatch("export file " + name + " does not match its sha256");
      }
    }
    auto vocab = Vocabulary::load(dir / "vocab.json");
    auto params = load_encoder(dir / "encoder.json");
    if (manifest.at("L").get<int>() != params.context_length() ||
        manifest.at("d").get<int>() != params.embed_dim() ||
        manifest.at("V").get<int>() != params.vocab_size() ||
        static_cast<int>(vocab.size()) != params.vocab_size()) {
      throw DataError("export manifest dimensions disagree with the emitted files");
    }
    return ExportBundle{std::move(vocab), std::move(params), manifest};
  } catch (const json::exception& e) {
    throw MalformedFile("export manifest: " + std::string(e.what()));
  }
}

}  // namespace cforge

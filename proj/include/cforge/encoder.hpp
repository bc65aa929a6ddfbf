#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "cforge/io.hpp"
#include "cforge/types.hpp"
#include "cforge/vocab.hpp"

namespace cforge {

enum class EncoderVariant { reference, table_only };

std::string to_string(EncoderVariant v);
EncoderVariant parse_encoder_variant(const std::string& s);

/// Parameters of the text encoder: per-token and per-position tables and the
/// weight of the causal running-mean mix (reference variant only).
///
/// Immutable once built. The fingerprint is a SHA-256 over the variant, shape,
/// mix weight and both tables at f32 precision, so parameters loaded from a
/// file fingerprint identically to the ones that were saved.
class EncoderParams {
 public:
  EncoderParams(EncoderVariant variant, RowMatrix<double> token_table,
                RowMatrix<double> positional_table, double mix_weight);

  EncoderVariant variant() const { return variant_; }
  int context_length() const { return static_cast<int>(positional_table_.rows()); }
  int embed_dim() const { return static_cast<int>(token_table_.cols()); }
  int vocab_size() const { return static_cast<int>(token_table_.rows()); }
  double mix_weight() const { return mix_weight_; }
  const RowMatrix<double>& token_table() const { return token_table_; }
  const RowMatrix<double>& positional_table() const { return positional_table_; }
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  EncoderVariant variant_;
  RowMatrix<double> token_table_;
  RowMatrix<double> positional_table_;
  double mix_weight_;
  std::string fingerprint_;
};

/// Writes `<path>` (JSON manifest) and a sibling `<stem>.f32` payload.
void save_encoder(const EncoderParams& params, const std::filesystem::path& path);

/// Reads a manifest that either names a sibling payload file (`payload_file`)
/// or is the first line of a container with the payload inline.
EncoderParams load_encoder(const std::filesystem::path& path);

/// Position 0 = BOS, then the tokens, then EOS, then PAD up to L-1.
/// Requires ids.size() <= k_slot <= L-2.
Embedding encode(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> ids,
                 int k_slot);

/// Token plus positional rows in the encode() layout, before mixing.
Embedding embed_rows(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> ids,
                     int k_slot);

/// Same as encode(), writing into a reusable L x d buffer.
void encode_into(const EncoderParams& params, const Vocabulary& v, std::span<const TokenId> ids,
                 int k_slot, Embedding& out);

/// Applies only the mixing stage to caller-supplied per-position rows.
Embedding encode_soft(const EncoderParams& params, const Embedding& soft_rows);

/// Gradient of ||encode_soft(x) - target||_F^2 with respect to x.
Embedding grad_soft(const EncoderParams& params, const Embedding& soft_rows,
                    const Embedding& target);

/// Mean over positions.
template <typename Derived>
Vector<typename Derived::Scalar> pool(const Eigen::MatrixBase<Derived>& e) {
  return e.colwise().mean().transpose();
}

// Directory layout written by the external export tool: vocab.json,
// encoder.json, encoder.f32 and manifest.json carrying per-file SHA-256s.
struct ExportBundle {
  Vocabulary vocab;
  EncoderParams params;
  json manifest;
};

ExportBundle load_export(const std::filesystem::path& dir);

}  // namespace cforge

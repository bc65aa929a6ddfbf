#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "cforge/encoder.hpp"
#include "cforge/error.hpp"
#include "support.hpp"

namespace cforge {
namespace {

using test::gaussian_matrix;
using test::random_params;
using test::word_vocab;

// Central differences of ||encode_soft(x) - target||^2, written independently.
Embedding finite_difference(const EncoderParams& p, Embedding x, const Embedding& target, double h) {
  Embedding g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = (encode_soft(p, x) - target).squaredNorm();
      x(i, j) = keep - h;
      const double down = (encode_soft(p, x) - target).squaredNorm();
      x(i, j) = keep;
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

double max_relative_error(const Embedding& analytic, const Embedding& fd) {
  return (analytic - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-300);
}

TEST(Encode, MixZeroIsTableLookup) {
  const auto v = word_vocab(12);
  const auto p = random_params(15, 10, 4, 0.0, 1);
  const std::vector<TokenId> ids = {5, 7, 3};
  const Embedding e = encode(p, v, ids, 6);
  const std::vector<TokenId> layout = {0, 5, 7, 3, 1, 2, 2, 2, 2, 2};
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(e.row(i), p.token_table().row(layout[i]) + p.positional_table().row(i)) << "row " << i;
  }
}

TEST(Encode, MixZeroIsLocal) {
  const auto v = word_vocab(12);
  const auto p = random_params(15, 10, 4, 0.0, 2);
  const Embedding a = encode(p, v, std::vector<TokenId>{5, 7, 3}, 6);
  const Embedding b = encode(p, v, std::vector<TokenId>{5, 9, 3}, 6);
  for (int i = 0; i < 10; ++i) {
    if (i == 2) {
      EXPECT_NE(a.row(i), b.row(i));
    } else {
      EXPECT_EQ(a.row(i), b.row(i)) << "row " << i;
    }
  }
}

TEST(Encode, FullMixOfConstantRowsIsConstant) {
  const auto v = word_vocab(5);
  const int V = 8, L = 7, d = 3;
  const Vec u = (Vec(3) << 0.5, -1.25, 2.0).finished();
  RowMatrix<double> tokens(V, d);
  for (int i = 0; i < V; ++i) tokens.row(i) = u.transpose();
  const EncoderParams p(EncoderVariant::reference, tokens, RowMatrix<double>::Zero(L, d), 1.0);
  const Embedding e = encode(p, v, std::vector<TokenId>{4, 6}, 3);
  for (int i = 0; i < L; ++i) {
    for (int c = 0; c < d; ++c) EXPECT_NEAR(e(i, c), u[c], 1e-15);
  }
}

TEST(Encode, MatchesLoopOracle) {
  const auto v = word_vocab(30);
  std::mt19937_64 gen(5);
  for (double mix : {0.0, 0.3, 0.75, 1.0}) {
    const auto p = random_params(33, 12, 5, mix, 7);
    for (int trial = 0; trial < 20; ++trial) {
      const int k = 1 + static_cast<int>(gen() % 10);
      const auto ids = test::random_ids(v, k, gen);
      const Embedding got = encode(p, v, ids, 10);
      const Embedding want = test::naive_encode(p, v, ids, 10);
      EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, want.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(Encode, TableOnlyIgnoresMixWeight) {
  const auto v = word_vocab(10);
  const auto a = random_params(13, 8, 4, 0.0, 9, EncoderVariant::table_only);
  const EncoderParams b(EncoderVariant::table_only, a.token_table(), a.positional_table(), 0.9);
  const std::vector<TokenId> ids = {4, 5};
  EXPECT_EQ(encode(a, v, ids, 4), encode(b, v, ids, 4));
}

TEST(Encode, BitwiseDeterministic) {
  const auto v = word_vocab(10);
  const auto p = random_params(13, 8, 4, 0.4, 10);
  const std::vector<TokenId> ids = {4, 5, 9};
  const Embedding a = encode(p, v, ids, 5);
  const Embedding b = encode(p, v, ids, 5);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * a.size()));
}

TEST(Encode, RejectsPromptLongerThanSlot) {
  const auto v = word_vocab(10);
  const auto p = random_params(13, 8, 4, 0.4, 11);
  try {
    encode(p, v, std::vector<TokenId>{4, 5, 6}, 2);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "prompt exceeds slot length");
  }
  EXPECT_THROW(encode(p, v, std::vector<TokenId>{4}, 7), DataError);  // k_slot > L - 2
}

TEST(Encode, LinearInTables) {
  const auto v = word_vocab(10);
  const auto p = random_params(13, 8, 4, 0.6, 12);
  const double s = 2.5;
  const EncoderParams scaled(EncoderVariant::reference, s * p.token_table(), s * p.positional_table(), 0.6);
  const std::vector<TokenId> ids = {4, 8, 6};
  const Embedding a = encode(p, v, ids, 4);
  const Embedding b = encode(scaled, v, ids, 4);
  EXPECT_LE((b - s * a).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pool, ConstantRows) {
  Embedding e(4, 2);
  for (int i = 0; i < 4; ++i) e.row(i) << 1.5, -2.0;
  EXPECT_EQ(pool(e), (Vec(2) << 1.5, -2.0).finished());
}

TEST(Pool, OppositeRowsCancel) {
  Embedding e(2, 3);
  e.row(0) << 1.0, -4.0, 0.25;
  e.row(1) = -e.row(0);
  EXPECT_EQ(pool(e), Vec::Zero(3));
}

TEST(Pool, ColumnMeansMatchDirectSummation) {
  const Embedding e = gaussian_matrix(21, 3, 2);
  const Vec got = pool(e);
  for (int c = 0; c < 2; ++c) EXPECT_NEAR(got[c], (e(0, c) + e(1, c) + e(2, c)) / 3.0, 1e-15);
}

TEST(EncodeSoft, MixZeroIsIdentity) {
  const auto p = random_params(6, 5, 3, 0.0, 13);
  const Embedding x = gaussian_matrix(14, 5, 3);
  EXPECT_EQ(encode_soft(p, x), x);
}

TEST(EncodeSoft, AgreesWithEncodeOn50Prompts) {
  const auto v = word_vocab(40);
  const auto p = random_params(43, 12, 6, 0.45, 15);
  std::mt19937_64 gen(16);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(gen() % 10);
    const auto ids = test::random_ids(v, k, gen);
    EXPECT_EQ(encode(p, v, ids, 10), encode_soft(p, embed_rows(p, v, ids, 10)));
  }
}

TEST(EncodeSoft, RejectsNaNAndBadShape) {
  const auto p = random_params(6, 5, 3, 0.2, 17);
  Embedding x = gaussian_matrix(18, 5, 3);
  x(2, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(encode_soft(p, x), DataError);
  EXPECT_THROW(encode_soft(p, gaussian_matrix(18, 4, 3)), DataError);
}

TEST(GradSoft, ZeroAtPreimageWithoutMix) {
  const auto p = random_params(6, 5, 3, 0.0, 19);
  const Embedding x = gaussian_matrix(20, 5, 3);
  EXPECT_EQ(grad_soft(p, x, x), Embedding::Zero(5, 3));
}

TEST(GradSoft, QuadraticFormWithoutMix) {
  const auto p = random_params(6, 5, 3, 0.0, 22);
  const Embedding x = gaussian_matrix(23, 5, 3), t = gaussian_matrix(24, 5, 3);
  EXPECT_LE((grad_soft(p, x, t) - 2.0 * (x - t)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GradSoft, MatchesFiniteDifferencesAtHalfMix) {
  const auto p = random_params(6, 9, 4, 0.5, 25);
  const Embedding x = gaussian_matrix(26, 9, 4), t = gaussian_matrix(27, 9, 4);
  EXPECT_LE(max_relative_error(grad_soft(p, x, t), finite_difference(p, x, t, 1e-5)), 1e-4);
}

TEST(GradSoft, MatchesFiniteDifferencesOver20Seeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double mix = 0.05 + 0.9 * static_cast<double>(seed) / 19.0;
    const auto p = random_params(6, 8, 5, mix, 100 + seed);
    const Embedding x = gaussian_matrix(200 + seed, 8, 5), t = gaussian_matrix(300 + seed, 8, 5);
    EXPECT_LE(max_relative_error(grad_soft(p, x, t), finite_difference(p, x, t, 1e-5)), 1e-4) << seed;
  }
}

TEST(EncoderParams, Validation) {
  EXPECT_THROW(EncoderParams(EncoderVariant::reference, gaussian_matrix(1, 4, 3), gaussian_matrix(2, 5, 2), 0.1),
               DataError);
  EXPECT_THROW(EncoderParams(EncoderVariant::reference, gaussian_matrix(1, 4, 3), gaussian_matrix(2, 5, 3), 1.5),
               DataError);
  RowMatrix<double> bad = gaussian_matrix(1, 4, 3);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(EncoderParams(EncoderVariant::reference, bad, gaussian_matrix(2, 5, 3), 0.1), DataError);
}

TEST(EncoderFile, RoundTripAtStoredPrecision) {
  const auto dir = test::temp_dir("encoder_rt");
  const auto p = random_params(20, 8, 4, 0.3, 28);
  save_encoder(p, dir / "encoder.json");
  EXPECT_TRUE(std::filesystem::exists(dir / "encoder.f32"));
  const auto q = load_encoder(dir / "encoder.json");
  EXPECT_EQ(q.token_table(), round_to_f32(p.token_table()));
  EXPECT_EQ(q.positional_table(), round_to_f32(p.positional_table()));
  EXPECT_EQ(q.mix_weight(), 0.3);
  EXPECT_EQ(q.fingerprint(), p.fingerprint());
  EXPECT_EQ(std::filesystem::file_size(dir / "encoder.f32"), (20 + 8) * 4 * sizeof(float));
}

TEST(EncoderFile, TruncatedPayloadIsMalformed) {
  const auto dir = test::temp_dir("encoder_trunc");
  save_encoder(random_params(20, 8, 4, 0.3, 29), dir / "encoder.json");
  std::filesystem::resize_file(dir / "encoder.f32", 100);
  EXPECT_THROW(load_encoder(dir / "encoder.json"), MalformedFile);
}

TEST(EncoderFile, FingerprintDiffersAcrossParams) {
  EXPECT_NE(random_params(20, 8, 4, 0.3, 30).fingerprint(), random_params(20, 8, 4, 0.3, 31).fingerprint());
  EXPECT_NE(random_params(20, 8, 4, 0.3, 30).fingerprint(), random_params(20, 8, 4, 0.31, 30).fingerprint());
}

// Files laid out the way the export tool writes them: table_only variant,
// no stored fingerprint, manifest.json with per-file SHA-256.
void write_export(const std::filesystem::path& dir, int V, int L, int d) {
  std::vector<std::string> surfaces = {"<|startoftext|>", "<|endoftext|>", "<pad>"};
  for (int i = 3; i < V; ++i) surfaces.push_back("tok" + std::to_string(i));
  const json vocab = {{"version", 1}, {"tokens", surfaces}, {"bos_id", 0}, {"eos_id", 1},
                      {"pad_id", 2},  {"unk_id", 3},        {"searchable", "all_non_special"}};
  write_file_atomic(dir / "vocab.json", vocab.dump());
  std::string payload;
  append_f32(payload, gaussian_matrix(40, V, d));
  append_f32(payload, gaussian_matrix(41, L, d));
  const json enc = {{"version", 1}, {"variant", "table_only"}, {"L", L}, {"d", d}, {"V", V},
                    {"mix_weight", 0.0}, {"payload_file", "encoder.f32"},
                    {"offsets", {{"token_table", 0}, {"positional_table", V * d * 4}}}};
  write_file_atomic(dir / "encoder.f32", payload);
  write_file_atomic(dir / "encoder.json", enc.dump());
  json manifest = {{"source_model_id", "test/encoder"}, {"L", L}, {"d", d}, {"V", V},
                   {"emitted_variant", "table_only"}};
  for (const char* f : {"vocab.json", "encoder.json", "encoder.f32"}) manifest["sha256"][f] = sha256_file(dir / f);
  write_file_atomic(dir / "manifest.json", manifest.dump());
}

TEST(ExportBundle, LoadsWithMatchingDimensions) {
  const auto dir = test::temp_dir("export_ok");
  write_export(dir, 50, 12, 6);
  const auto b = load_export(dir);
  EXPECT_EQ(b.params.vocab_size(), 50);
  EXPECT_EQ(b.params.context_length(), 12);
  EXPECT_EQ(b.params.embed_dim(), 6);
  EXPECT_EQ(b.params.variant(), EncoderVariant::table_only);
  EXPECT_EQ(b.vocab.size(), 50u);
  EXPECT_EQ(std::filesystem::file_size(dir / "encoder.f32"), (50 * 6 + 12 * 6) * sizeof(float));
}

TEST(ExportBundle, HashMismatchIsRejected) {
  const auto dir = test::temp_dir("export_hash");
  write_export(dir, 50, 12, 6);
  {
    std::ofstream f(dir / "encoder.f32", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(7);
    f.put('\x5a');
  }
  EXPECT_THROW(load_export(dir), FingerprintMismatch);
}

TEST(ExportBundle, DimensionMismatchIsRejected) {
  const auto dir = test::temp_dir("export_dims");
  write_export(dir, 50, 12, 6);
  json m = read_json_file(dir / "manifest.json");
  m["d"] = 768;
  write_file_atomic(dir / "manifest.json", m.dump());
  EXPECT_THROW(load_export(dir), DataError);
}

}  // namespace
}  // namespace cforge

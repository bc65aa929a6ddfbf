#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cforge/encoder.hpp"
#include "cforge/random.hpp"
#include "cforge/vocab.hpp"

namespace cforge::test {

/// Surfaces "t0".."t9"; t0..t2 are BOS/EOS/PAD and t9 is the unknown token.
inline Vocabulary ten_token_vocab() {
  std::vector<std::string> s;
  for (int i = 0; i < 10; ++i) s.push_back("t" + std::to_string(i));
  return Vocabulary(s, SpecialTokens{.bos = 0, .eos = 1, .pad = 2, .unk = 9});
}

/// Three specials followed by `n` searchable words w0..w{n-1}; w0 doubles as unk.
inline Vocabulary word_vocab(int n) {
  std::vector<std::string> s = {"<bos>", "<eos>", "<pad>"};
  for (int i = 0; i < n; ++i) s.push_back("w" + std::to_string(i));
  return Vocabulary(s, SpecialTokens{.bos = 0, .eos = 1, .pad = 2, .unk = 3});
}

inline RowMatrix<double> gaussian_matrix(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols,
                                         double sd = 1.0) {
  Philox rng(seed, 99);
  Gaussian normal;
  RowMatrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * normal(rng);
  return m;
}

inline EncoderParams random_params(int V, int L, int d, double mix, std::uint64_t seed,
                                   EncoderVariant variant = EncoderVariant::reference) {
  return EncoderParams(variant, gaussian_matrix(seed, V, d), gaussian_matrix(seed + 1, L, d, 0.5), mix);
}

/// Uniform random searchable ids of length k.
inline std::vector<TokenId> random_ids(const Vocabulary& v, int k, std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> pick(0, v.searchable().size() - 1);
  std::vector<TokenId> ids(static_cast<std::size_t>(k));
  for (auto& id : ids) id = v.searchable()[pick(gen)];
  return ids;
}

/// Straightforward loop implementation of the reference encoder, kept
/// independent of the library's code path.
inline Embedding naive_encode(const EncoderParams& p, const Vocabulary& v, const std::vector<TokenId>& ids,
                              int k_slot) {
  const int L = p.context_length(), d = p.embed_dim();
  std::vector<TokenId> layout(static_cast<std::size_t>(L), v.special().pad);
  layout[0] = v.special().bos;
  for (std::size_t i = 0; i < ids.size(); ++i) layout[i + 1] = ids[i];
  layout[ids.size() + 1] = v.special().eos;
  (void)k_slot;
  Embedding e(L, d);
  for (int i = 0; i < L; ++i) {
    for (int c = 0; c < d; ++c) e(i, c) = p.token_table()(layout[static_cast<std::size_t>(i)], c) + p.positional_table()(i, c);
  }
  if (p.variant() == EncoderVariant::table_only) return e;
  const double w = p.mix_weight();
  Embedding h(L, d);
  for (int c = 0; c < d; ++c) {
    double running = 0.0;
    for (int i = 0; i < L; ++i) {
      running += e(i, c);
      h(i, c) = (1.0 - w) * e(i, c) + w * running / (i + 1);
    }
  }
  return h;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cforge::test

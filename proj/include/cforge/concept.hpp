#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cforge/encoder.hpp"
#include "cforge/vocab.hpp"

namespace cforge {

struct PromptPair {
  PromptPair(TextPrompt with_concept, TextPrompt without_concept);

  TextPrompt with_concept;
  TextPrompt without_concept;
};

struct PairCorpus {
  std::string concept_name;
  int k_slot = 0;
  std::vector<PromptPair> pairs;
};

/// JSONL: a header line {"concept": ..., "k_slot": ...} then one
/// {"with": ..., "without": ...} object per line.
PairCorpus load_pair_corpus(const std::filesystem::path& path);
std::string format_pair_corpus(const PairCorpus& corpus);

struct ConceptVector {
  std::string concept_name;
  Embedding data;
  int n_used = 0;
  int k_slot = 0;
  double norm = 0.0;
  std::string encoder_fingerprint;
};

/// Mean over pairs of encode(with) - encode(without). Prompts longer than
/// k_slot are truncated (with a warning). The per-pair differences are
/// reduced by pairwise summation in corpus order, then divided by N; no
/// normalization is applied.
ConceptVector extract_concept(const EncoderParams& params, const Vocabulary& v,
                              const PairCorpus& corpus, int k_slot);

inline ConceptVector extract_concept(const EncoderParams& params, const Vocabulary& v,
                                     const PairCorpus& corpus) {
  return extract_concept(params, v, corpus, corpus.k_slot);
}

/// `provenance`, when given, is stored verbatim in the manifest.
void save_concept(const ConceptVector& cv, const std::filesystem::path& path,
                  const json& provenance = nullptr);

/// Throws FingerprintMismatch when the file was extracted with other encoder
/// parameters, MalformedFile on any structural problem.
ConceptVector load_concept(const std::filesystem::path& path, const EncoderParams& params);

/// Tokenizes and truncates to k_slot, logging a warning when truncation happens.
std::vector<TokenId> tokenize_for_slot(const Vocabulary& v, const TextPrompt& p, int k_slot);

}  // namespace cforge

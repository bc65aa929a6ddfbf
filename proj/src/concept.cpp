#include "cforge/concept.hpp"

#include <cmath>
#include <sstream>

#include "cforge/log.hpp"
#include "cforge/parallel.hpp"

namespace cforge {

namespace fs = std::filesystem;

namespace {

constexpr int kConceptFormatVersion = 1;

Embedding pairwise_sum(const std::vector<Embedding>& terms, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return terms[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(terms, lo, mid) + pairwise_sum(terms, mid, hi);
}

}  // namespace

PromptPair::PromptPair(TextPrompt with, TextPrompt without)
    : with_concept(std::move(with)), without_concept(std::move(without)) {
  if (with_concept == without_concept) {
    throw DataError("prompt pair is identical on both sides: '" + with_concept.text() + "'");
  }
}

PairCorpus load_pair_corpus(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  PairCorpus corpus;
  bool have_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw MalformedFile(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        corpus.concept_name = j.at("concept").get<std::string>();
        corpus.k_slot = j.at("k_slot").get<int>();
        have_header = true;
        continue;
      }
      corpus.pairs.emplace_back(TextPrompt(j.at("with").get<std::string>()),
                                TextPrompt(j.at("without").get<std::string>()));
    } catch (const json::exception& e) {
      throw MalformedFile(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw MalformedFile(path.string() + ": missing header line");
  if (corpus.pairs.empty()) throw DataError(path.string() + ": corpus has no pairs");
  return corpus;
}

std::string format_pair_corpus(const PairCorpus& corpus) {
  std::string out = json{{"concept", corpus.concept_name}, {"k_slot", corpus.k_slot}}.dump() + "\n";
  for (const auto& p : corpus.pairs) {
    out += json{{"with", p.with_concept.text()}, {"without", p.without_concept.text()}}.dump() + "\n";
  }
  return out;
}

std::vector<TokenId> tokenize_for_slot(const Vocabulary& v, const TextPrompt& p, int k_slot) {
  auto ids = tokenize(v, p);
  if (static_cast<int>(ids.size()) > k_slot) {
    log::warn("prompt_truncated",
              {{"prompt", p.text()}, {"tokens", ids.size()}, {"k_slot", k_slot}});
    ids.resize(static_cast<std::size_t>(k_slot));
  }
  return ids;
}

ConceptVector extract_concept(const EncoderParams& params, const Vocabulary& v,
                              const PairCorpus& corpus, int k_slot) {
  if (corpus.pairs.empty()) throw DataError("cannot extract a concept from an empty corpus");
  const std::size_t n = corpus.pairs.size();
  std::vector<Embedding> diffs(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& pair = corpus.pairs[i];
    diffs[i] = encode(params, v, tokenize_for_slot(v, pair.with_concept, k_slot), k_slot) -
               encode(params, v, tokenize_for_slot(v, pair.without_concept, k_slot), k_slot);
  });
  ConceptVector cv;
  cv.concept_name = corpus.concept_name;
  cv.data = pairwise_sum(diffs, 0, n) / static_cast<double>(n);
  cv.n_used = static_cast<int>(n);
  cv.k_slot = k_slot;
  cv.norm = cv.data.norm();
  cv.encoder_fingerprint = params.fingerprint();
  return cv;
}

void save_concept(const ConceptVector& cv, const fs::path& path, const json& provenance) {
  TensorContainer c;
  append_f32(c.payload, cv.data);
  const double stored_norm = round_to_f32(cv.data).norm();
  c.manifest = {
      {"format", "cforge-concept"},
      {"version", kConceptFormatVersion},
      {"concept", cv.concept_name},
      {"L", cv.data.rows()},
      {"d", cv.data.cols()},
      {"n_used", cv.n_used},
      {"k_slot", cv.k_slot},
      {"norm", stored_norm},
      {"encoder_fingerprint", cv.encoder_fingerprint},
      {"dtype", "f32"},
      {"byte_order", "little"},
  };
  if (!provenance.is_null()) c.manifest["provenance"] = provenance;
  write_file_atomic(path, encode_container(c));
}

ConceptVector load_concept(const fs::path& path, const EncoderParams& params) {
  const auto c = decode_container(read_file(path), path.string());
  try {
    const auto& m = c.manifest;
    if (m.value("format", "") != "cforge-concept" || m.value("version", 0) != kConceptFormatVersion) {
      throw MalformedFile(path.string() + ": not a concept file");
    }
    const auto L = m.at("L").get<Eigen::Index>();
    const auto d = m.at("d").get<Eigen::Index>();
    if (L <= 0 || d <= 0 || c.payload.size() != static_cast<std::size_t>(L * d) * sizeof(float)) {
      throw MalformedFile(path.string() + ": payload size disagrees with shape");
    }
    ConceptVector cv;
    cv.concept_name = m.at("concept").get<std::string>();
    cv.n_used = m.at("n_used").get<int>();
    cv.k_slot = m.at("k_slot").get<int>();
    cv.norm = m.at("norm").get<double>();
    cv.encoder_fingerprint = m.at("encoder_fingerprint").get<std::string>();
    cv.data = read_f32_matrix(c.payload, 0, L, d);
    if (!all_finite(cv.data)) throw MalformedFile(path.string() + ": non-finite concept data");
    const double recomputed = cv.data.norm();
    if (std::abs(recomputed - cv.norm) > 1e-9 * std::max(1.0, std::abs(cv.norm))) {
      throw MalformedFile(path.string() + ": stored norm does not match data");
    }
    if (cv.encoder_fingerprint != params.fingerprint()) {
      throw FingerprintMismatch(path.string() + ": concept was extracted with a different encoder");
    }
    if (L != params.context_length() || d != params.embed_dim()) {
      throw DataError(path.string() + ": concept shape does not match the encoder");
    }
    return cv;
  } catch (const json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
}

}  // namespace cforge

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cforge/io.hpp"
#include "cforge/types.hpp"

namespace cforge {

struct SpecialTokens {
  TokenId bos = 0;
  TokenId eos = 1;
  TokenId pad = 2;
  TokenId unk = 3;
};

/// Ordered token table (index = token id) with special ids and the subset of
/// tokens an optimizer may place in a prompt.
///
/// Searchable surfaces must be non-empty, lowercase and free of whitespace so
/// that decoding a prompt and tokenizing it again gives back the same ids.
/// `unk` is an ordinary searchable token that absorbs unknown words.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> surfaces, SpecialTokens special,
             std::optional<std::vector<TokenId>> searchable = std::nullopt);

  static Vocabulary from_json(const json& j);
  static Vocabulary load(const std::filesystem::path& path);
  json to_json() const;

  std::size_t size() const { return surfaces_.size(); }
  const std::string& surface(TokenId id) const;
  std::optional<TokenId> find(std::string_view surface) const;

  const SpecialTokens& special() const { return special_; }
  bool is_special(TokenId id) const;
  bool in_range(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }
  bool is_searchable(TokenId id) const { return in_range(id) && searchable_mask_[id]; }
  std::span<const TokenId> searchable() const { return searchable_; }
  std::size_t max_surface_length() const { return max_surface_len_; }

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> index_;
  SpecialTokens special_;
  std::vector<TokenId> searchable_;
  std::vector<bool> searchable_mask_;
  bool all_non_special_ = true;
  std::size_t max_surface_len_ = 0;
};

class TextPrompt {
 public:
  explicit TextPrompt(std::string text);
  const std::string& text() const { return text_; }
  bool operator==(const TextPrompt&) const = default;

 private:
  std::string text_;
};

/// Fixed-length sequence of searchable token ids.
class HardPrompt {
 public:
  // Validates ids against the vocabulary and the encoder's context length.
  HardPrompt(const Vocabulary& v, std::vector<TokenId> ids, int context_length);

  std::span<const TokenId> ids() const { return ids_; }
  int k() const { return static_cast<int>(ids_.size()); }
  bool operator==(const HardPrompt&) const = default;

 private:
  std::vector<TokenId> ids_;
};

/// Lowercases and splits on whitespace. Each word is looked up whole, then
/// segmented greedily into the longest known surfaces; a word that cannot be
/// fully segmented becomes a single unk token. Special surfaces never match.
std::vector<TokenId> tokenize(const Vocabulary& v, const TextPrompt& p);

TextPrompt decode(const Vocabulary& v, std::span<const TokenId> ids);
inline TextPrompt decode(const Vocabulary& v, const HardPrompt& hp) { return decode(v, hp.ids()); }

enum class DilutePosition { prefix, suffix };

TextPrompt dilute(const TextPrompt& p, const TextPrompt& filler, DilutePosition position);

std::string to_lower_ascii(std::string_view s);

}  // namespace cforge

#include "cforge/vocab.hpp"

#include <algorithm>
#include <cctype>

namespace cforge {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) words.push_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> surfaces, SpecialTokens special,
                       std::optional<std::vector<TokenId>> searchable)
    : surfaces_(std::move(surfaces)), special_(special) {
  if (surfaces_.empty()) throw DataError("vocabulary is empty");
  index_.reserve(surfaces_.size());
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    const auto& s = surfaces_[i];
    if (s.empty()) throw DataError("vocabulary surface " + std::to_string(i) + " is empty");
    if (!index_.emplace(s, static_cast<TokenId>(i)).second) {
      throw DataError("duplicate vocabulary surface '" + s + "'");
    }
    max_surface_len_ = std::max(max_surface_len_, s.size());
  }
  for (TokenId id : {special_.bos, special_.eos, special_.pad, special_.unk}) {
    if (!in_range(id)) throw DataError("special token id " + std::to_string(id) + " out of range");
  }
  if (special_.unk == special_.bos || special_.unk == special_.eos || special_.unk == special_.pad) {
    throw DataError("unk must be an ordinary token");
  }

  searchable_mask_.assign(size(), false);
  if (searchable) {
    all_non_special_ = false;
    for (TokenId id : *searchable) {
      if (!in_range(id)) throw DataError("searchable id " + std::to_string(id) + " out of range");
      if (is_special(id)) throw DataError("searchable set contains special id " + std::to_string(id));
      searchable_mask_[id] = true;
    }
  } else {
    for (std::size_t i = 0; i < size(); ++i) searchable_mask_[i] = !is_special(static_cast<TokenId>(i));
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (!searchable_mask_[i]) continue;
    const auto& s = surfaces_[i];
    if (to_lower_ascii(s) != s || std::any_of(s.begin(), s.end(), is_space)) {
      throw DataError("searchable surface '" + s + "' must be lowercase without whitespace");
    }
    searchable_.push_back(static_cast<TokenId>(i));
  }
  if (searchable_.empty()) throw DataError("searchable set is empty");
}

bool Vocabulary::is_special(TokenId id) const {
  return id == special_.bos || id == special_.eos || id == special_.pad;
}

const std::string& Vocabulary::surface(TokenId id) const {
  if (!in_range(id)) throw DataError("token id " + std::to_string(id) + " out of range");
  return surfaces_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view s) const {
  auto it = index_.find(std::string(s));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary Vocabulary::from_json(const json& j) {
  try {
    SpecialTokens sp{j.at("bos_id").get<TokenId>(), j.at("eos_id").get<TokenId>(),
                     j.at("pad_id").get<TokenId>(), j.at("unk_id").get<TokenId>()};
    auto surfaces = j.at("tokens").get<std::vector<std::string>>();
    std::optional<std::vector<TokenId>> searchable;
    const auto& s = j.at("searchable");
    if (s.is_string()) {
      if (s.get<std::string>() != "all_non_special") {
        throw MalformedFile("searchable must be \"all_non_special\" or an id list");
      }
    } else {
      searchable = s.get<std::vector<TokenId>>();
    }
    return Vocabulary(std::move(surfaces), sp, std::move(searchable));
  } catch (const json::exception& e) {
    throw MalformedFile(std::string("vocabulary: ") + e.what());
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

json Vocabulary::to_json() const {
  json j = {{"version", 1},
            {"tokens", surfaces_},
            {"bos_id", special_.bos},
            {"eos_id", special_.eos},
            {"pad_id", special_.pad},
            {"unk_id", special_.unk}};
  if (all_non_special_) {
    j["searchable"] = "all_non_special";
  } else {
    j["searchable"] = searchable_;
  }
  return j;
}

TextPrompt::TextPrompt(std::string text) : text_(std::move(text)) {
  if (std::all_of(text_.begin(), text_.end(), is_space)) throw DataError("empty prompt");
}

HardPrompt::HardPrompt(const Vocabulary& v, std::vector<TokenId> ids, int context_length)
    : ids_(std::move(ids)) {
  if (ids_.empty()) throw DataError("hard prompt must hold at least one token");
  if (k() > context_length - 2) {
    throw DataError("hard prompt length " + std::to_string(k()) + " exceeds context length " +
                    std::to_string(context_length) + " minus BOS/EOS");
  }
  for (TokenId id : ids_) {
    if (!v.is_searchable(id)) throw DataError("token " + std::to_string(id) + " is not searchable");
  }
}

std::vector<TokenId> tokenize(const Vocabulary& v, const TextPrompt& p) {
  const std::string lowered = to_lower_ascii(p.text());
  std::vector<TokenId> out;
  auto lookup = [&](std::string_view piece) -> std::optional<TokenId> {
    auto id = v.find(piece);
    if (id && v.is_special(*id)) return std::nullopt;
    return id;
  };
  for (std::string_view word : split_words(lowered)) {
    if (auto id = lookup(word)) {
      out.push_back(*id);
      continue;
    }
    std::vector<TokenId> pieces;
    std::size_t pos = 0;
    while (pos < word.size()) {
      std::optional<TokenId> hit;
      std::size_t len = std::min(v.max_surface_length(), word.size() - pos);
      for (; len > 0; --len) {
        if ((hit = lookup(word.substr(pos, len)))) break;
      }
      if (!hit) break;
      pieces.push_back(*hit);
      pos += len;
    }
    if (pos == word.size()) {
      out.insert(out.end(), pieces.begin(), pieces.end());
    } else {
      out.push_back(v.special().unk);
    }
  }
  if (out.empty()) throw DataError("empty prompt");
  return out;
}

TextPrompt decode(const Vocabulary& v, std::span<const TokenId> ids) {
  std::string text;
  for (TokenId id : ids) {
    if (!text.empty()) text.push_back(' ');
    text += v.surface(id);
  }
  return TextPrompt(std::move(text));
}

TextPrompt dilute(const TextPrompt& p, const TextPrompt& filler, DilutePosition position) {
  if (position == DilutePosition::suffix) return TextPrompt(p.text() + " " + filler.text());
  return TextPrompt(filler.text() + " " + p.text());
}

}  // namespace cforge

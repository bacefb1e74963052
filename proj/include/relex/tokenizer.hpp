#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "relex/error.hpp"
#include "relex/text.hpp"

namespace relex {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kS1 = "[S1]";
inline constexpr std::string_view kE1 = "[E1]";
inline constexpr std::string_view kS2 = "[S2]";
inline constexpr std::string_view kE2 = "[E2]";

struct SpecialTokens {
  int pad = 0;
  int unk = 1;
  int cls = 2;
  int sep = 3;
  int s1 = 4;
  int e1 = 5;
  int s2 = 6;
  int e2 = 7;
};

// Contract every tokenizer plugged into the encoder input path must satisfy.
// Entity markers are atomic vocabulary items and tokenization is deterministic.
// Implementations are read-only after construction and safe to share.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  // allow_special=false maps literal special-token strings in raw text to [UNK].
  virtual std::vector<std::string> tokenize(std::string_view text, bool allow_special = true) const = 0;
  virtual int token_to_id(std::string_view token) const = 0;
  virtual std::string id_to_token(int id) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual const SpecialTokens& specials() const = 0;
  // Auto-regressive families put the classification token last.
  virtual bool cls_at_end() const { return false; }
  virtual std::string fingerprint() const = 0;

  std::vector<int> encode(std::string_view text, bool allow_special = true) const {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text, allow_special)) ids.push_back(token_to_id(tok));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(id_to_token(id));
    return out;
  }
};

// Lower-cased word/punctuation tokenizer over a closed vocabulary. Used with
// the reference encoder; pretrained encoders bring their own tokenizer.
class BasicTokenizer final : public Tokenizer {
 public:
  static constexpr std::array<std::string_view, 8> kSpecialOrder = {
      kPadToken, kUnkToken, kClsToken, kSepToken, kS1, kE1, kS2, kE2};

  // `words` excludes specials; duplicates are dropped and order is kept.
  explicit BasicTokenizer(const std::vector<std::string>& words, bool cls_at_end = false)
      : cls_at_end_(cls_at_end) {
    for (auto s : kSpecialOrder) add(std::string(s));
    for (const auto& w : words) {
      if (!index_.count(w)) add(w);
    }
  }

  static bool is_special(std::string_view tok) {
    return std::find(kSpecialOrder.begin(), kSpecialOrder.end(), tok) != kSpecialOrder.end();
  }

  // Raw split used both for vocabulary building and tokenization.
  static std::vector<std::string> split(std::string_view text, bool allow_special) {
    std::vector<std::string> out;
    for (auto chunk : text::split_ws(text)) {
      if (is_special(chunk)) {
        out.emplace_back(allow_special ? chunk : kUnkToken);
        continue;
      }
      std::string word;
      for (char c : chunk) {
        auto u = static_cast<unsigned char>(c);
        if (u >= 0x80 || std::isalnum(u)) {
          word += static_cast<char>(std::tolower(u));
        } else {
          if (!word.empty()) out.push_back(std::move(word));
          word.clear();
          out.emplace_back(1, c);
        }
      }
      if (!word.empty()) out.push_back(std::move(word));
    }
    return out;
  }

  std::vector<std::string> tokenize(std::string_view text, bool allow_special = true) const override {
    return split(text, allow_special);
  }

  int token_to_id(std::string_view token) const override {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? specials_.unk : it->second;
  }

  std::string id_to_token(int id) const override {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) return std::string(kUnkToken);
    return vocab_[static_cast<std::size_t>(id)];
  }

  std::size_t vocab_size() const override { return vocab_.size(); }
  const SpecialTokens& specials() const override { return specials_; }
  bool cls_at_end() const override { return cls_at_end_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  std::string fingerprint() const override {
    std::uint64_t h = text::fnv1a(cls_at_end_ ? "basic:cls-last" : "basic:cls-first");
    for (const auto& tok : vocab_) h = text::fnv1a(tok + "\n", h);
    return "basic-" + text::hex64(h);
  }

  // One token per line, specials first; the layout parsed by from_vocab_file.
  std::string to_vocab_file() const {
    std::string out = cls_at_end_ ? "#cls_at_end\n" : "";
    for (const auto& tok : vocab_) out += tok + "\n";
    return out;
  }

  static BasicTokenizer from_vocab_file(std::string_view content) {
    std::vector<std::string> words;
    bool cls_last = false;
    for (auto line : text::lines(content)) {
      if (line == "#cls_at_end") {
        cls_last = true;
        continue;
      }
      if (line.empty() || is_special(line)) continue;
      words.emplace_back(line);
    }
    return BasicTokenizer(words, cls_last);
  }

 private:
  void add(std::string tok) {
    index_.emplace(tok, static_cast<int>(vocab_.size()));
    vocab_.push_back(std::move(tok));
  }

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  SpecialTokens specials_;
  bool cls_at_end_ = false;
};

// Vocabulary of every token seen at least min_count times, sorted.
inline BasicTokenizer build_tokenizer(const std::vector<std::string_view>& texts,
                                      std::size_t min_count = 1, bool cls_at_end = false) {
  std::map<std::string, std::size_t> counts;
  for (auto t : texts) {
    for (auto& tok : BasicTokenizer::split(t, false)) ++counts[tok];
  }
  std::vector<std::string> words;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count && !BasicTokenizer::is_special(tok)) words.push_back(tok);
  }
  return BasicTokenizer(words, cls_at_end);
}

}  // namespace relex

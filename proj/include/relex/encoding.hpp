#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relex/candidates.hpp"
#include "relex/corpus.hpp"
#include "relex/error.hpp"
#include "relex/tokenizer.hpp"

namespace relex {

inline constexpr std::size_t kDefaultMaxLen = 384;

struct Positions {
  std::size_t cls = 0;
  std::size_t s1 = 0;
  std::size_t e1 = 0;
  std::size_t s2 = 0;
  std::size_t e2 = 0;

  friend bool operator==(const Positions&, const Positions&) = default;
};

struct PairRef {
  std::string doc_id;
  std::string arg1;
  std::string arg2;

  friend bool operator==(const PairRef&, const PairRef&) = default;
};

struct EncodedInstance {
  std::vector<int> token_ids;
  std::vector<int> segment_flags;
  Positions positions;
  PairRef pair_ref;

  std::size_t size() const { return token_ids.size(); }
};

using DocumentIndex = std::map<std::string, const Document*, std::less<>>;

inline DocumentIndex index_documents(std::span<const Document> documents) {
  DocumentIndex index;
  for (const auto& d : documents) index.emplace(d.doc_id, &d);
  return index;
}

inline const Document& lookup_document(const DocumentIndex& index, const std::string& doc_id) {
  auto it = index.find(doc_id);
  if (it == index.end()) fail(ErrorCode::DanglingReference, "unknown document " + doc_id);
  return *it->second;
}

namespace detail {

// Character range of the sentence holding `e`, stretched to cover an entity
// that runs past the sentence end.
inline std::pair<std::size_t, std::size_t> sentence_region(const Document& doc, const Entity& e) {
  const auto& s = doc.sentences[sentence_index_of(doc, e)];
  return {s.start, std::max(s.end, e.end)};
}

struct SentencePieces {
  std::string_view before, span, after;
};

inline SentencePieces pieces(const Document& doc, const Entity& e) {
  auto [begin, end] = sentence_region(doc, e);
  std::string_view t(doc.text);
  return {t.substr(begin, e.start - begin), t.substr(e.start, e.end - e.start),
          t.substr(e.end, end - e.end)};
}

// Single-space padding around markers, never doubling existing whitespace.
inline std::string insert_markers(const SentencePieces& p, std::string_view open,
                                  std::string_view close) {
  std::string out(p.before);
  if (!out.empty() && !text::is_space(out.back())) out += ' ';
  out += open;
  out += ' ';
  out += p.span;
  out += ' ';
  out += close;
  if (!p.after.empty() && !text::is_space(p.after.front())) out += ' ';
  out += p.after;
  return out;
}

struct MarkedTokens {
  std::vector<int> ids;
  std::size_t open = 0;   // index of the start marker
  std::size_t close = 0;  // index of the end marker
};

// Token ids of a marked sentence. Pieces are tokenized separately with special
// strings disabled, so raw text can never forge a marker.
inline MarkedTokens marked_tokens(const Document& doc, const Entity& e, int open, int close,
                                  const Tokenizer& tok) {
  auto p = pieces(doc, e);
  MarkedTokens out;
  out.ids = tok.encode(p.before, false);
  out.open = out.ids.size();
  out.ids.push_back(open);
  auto span = tok.encode(p.span, false);
  out.ids.insert(out.ids.end(), span.begin(), span.end());
  out.close = out.ids.size();
  out.ids.push_back(close);
  auto after = tok.encode(p.after, false);
  out.ids.insert(out.ids.end(), after.begin(), after.end());
  return out;
}

// Start of a `width`-token window centred on the marker span and containing it.
inline std::size_t window_start(const MarkedTokens& m, std::size_t width) {
  const std::size_t len = m.ids.size();
  const std::size_t lo = m.close + 1 > width ? m.close + 1 - width : 0;
  const std::size_t hi = std::min(m.open, len - width);
  const std::size_t centre = (m.open + m.close) / 2;
  const std::size_t want = centre > width / 2 ? centre - width / 2 : 0;
  return std::clamp(want, lo, hi);
}

}  // namespace detail

// Sentence texts with entity markers: arg1's sentence carries [S1]/[E1] and
// arg2's sentence carries [S2]/[E2], even when both are the same sentence.
inline std::pair<std::string, std::string> mark_entities(const Document& document,
                                                         const CandidatePair& pair) {
  const Entity& a1 = document.entity(pair.arg1);
  const Entity& a2 = document.entity(pair.arg2);
  return {detail::insert_markers(detail::pieces(document, a1), kS1, kE1),
          detail::insert_markers(detail::pieces(document, a2), kS2, kE2)};
}

// [CLS] s1 [SEP] s2 [SEP] (or s1 [SEP] s2 [SEP] [CLS] for cls-last tokenizers).
// Over-long input keeps a window around each marker span, shrinking the longer
// sentence first.
inline EncodedInstance build_instance(const CandidatePair& pair, const Document& document,
                                      const Tokenizer& tokenizer,
                                      std::size_t max_len = kDefaultMaxLen) {
  const auto& sp = tokenizer.specials();
  auto first = detail::marked_tokens(document, document.entity(pair.arg1), sp.s1, sp.e1, tokenizer);
  auto second = detail::marked_tokens(document, document.entity(pair.arg2), sp.s2, sp.e2, tokenizer);

  const std::size_t framing = 3;
  const std::size_t need1 = first.close - first.open + 1;
  const std::size_t need2 = second.close - second.open + 1;
  if (max_len < framing + need1 + need2) {
    fail(ErrorCode::MarkersDoNotFit, pair.doc_id + ":" + pair.arg1 + ":" + pair.arg2 +
                                         " needs " + std::to_string(framing + need1 + need2) +
                                         " tokens, max_len is " + std::to_string(max_len));
  }
  std::size_t keep1 = first.ids.size();
  std::size_t keep2 = second.ids.size();
  const std::size_t budget = max_len - framing;
  while (keep1 + keep2 > budget) {
    bool shrink_first = keep1 > need1 && (keep1 >= keep2 || keep2 == need2);
    if (shrink_first) {
      --keep1;
    } else {
      --keep2;
    }
  }
  const std::size_t off1 = detail::window_start(first, keep1);
  const std::size_t off2 = detail::window_start(second, keep2);

  EncodedInstance inst;
  inst.pair_ref = {pair.doc_id, pair.arg1, pair.arg2};
  auto push = [&](int id, int seg) {
    inst.token_ids.push_back(id);
    inst.segment_flags.push_back(seg);
  };
  const bool cls_last = tokenizer.cls_at_end();
  if (!cls_last) {
    inst.positions.cls = 0;
    push(sp.cls, 0);
  }
  const std::size_t base1 = inst.token_ids.size();
  for (std::size_t i = off1; i < off1 + keep1; ++i) push(first.ids[i], 0);
  push(sp.sep, 0);
  const std::size_t base2 = inst.token_ids.size();
  for (std::size_t i = off2; i < off2 + keep2; ++i) push(second.ids[i], 1);
  push(sp.sep, 1);
  if (cls_last) {
    inst.positions.cls = inst.token_ids.size();
    push(sp.cls, 1);
  }
  inst.positions.s1 = base1 + first.open - off1;
  inst.positions.e1 = base1 + first.close - off1;
  inst.positions.s2 = base2 + second.open - off2;
  inst.positions.e2 = base2 + second.close - off2;
  return inst;
}

struct Batch {
  std::vector<EncodedInstance> instances;
  std::vector<std::vector<int>> token_ids;      // padded to `length`
  std::vector<std::vector<int>> segment_flags;  // padded with 0
  std::vector<std::vector<int>> mask;           // 1 for real tokens
  std::size_t length = 0;

  std::size_t size() const { return instances.size(); }
};

inline Batch make_batch(std::vector<EncodedInstance> instances, int pad_id) {
  Batch b;
  for (const auto& inst : instances) b.length = std::max(b.length, inst.size());
  for (const auto& inst : instances) {
    auto ids = inst.token_ids;
    auto seg = inst.segment_flags;
    std::vector<int> mask(inst.size(), 1);
    ids.resize(b.length, pad_id);
    seg.resize(b.length, 0);
    mask.resize(b.length, 0);
    b.token_ids.push_back(std::move(ids));
    b.segment_flags.push_back(std::move(seg));
    b.mask.push_back(std::move(mask));
  }
  b.instances = std::move(instances);
  return b;
}

// Encodes pairs in order and groups them into padded batches.
inline std::vector<Batch> batch_encode(std::span<const CandidatePair> pairs,
                                       const DocumentIndex& documents, const Tokenizer& tokenizer,
                                       std::size_t max_len, std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorCode::InvalidConfig, "batch_size must be at least 1");
  std::vector<Batch> out;
  std::vector<EncodedInstance> pending;
  for (const auto& p : pairs) {
    try {
      pending.push_back(build_instance(p, lookup_document(documents, p.doc_id), tokenizer, max_len));
    } catch (const Error& e) {
      throw Error(e.code(), "pair " + p.doc_id + ":" + p.arg1 + ":" + p.arg2 + ": " + e.what());
    }
    if (pending.size() == batch_size) {
      out.push_back(make_batch(std::move(pending), tokenizer.specials().pad));
      pending.clear();
    }
  }
  if (!pending.empty()) out.push_back(make_batch(std::move(pending), tokenizer.specials().pad));
  return out;
}

// doc_id, arg1, arg2, decoded tokens, then the five positions; tab separated.
inline std::string debug_line(const EncodedInstance& inst, const Tokenizer& tokenizer) {
  const auto& p = inst.positions;
  return inst.pair_ref.doc_id + "\t" + inst.pair_ref.arg1 + "\t" + inst.pair_ref.arg2 + "\t" +
         text::join(tokenizer.decode(inst.token_ids), " ") + "\tcls=" + std::to_string(p.cls) +
         " s1=" + std::to_string(p.s1) + " e1=" + std::to_string(p.e1) +
         " s2=" + std::to_string(p.s2) + " e2=" + std::to_string(p.e2) + "\n";
}

}  // namespace relex

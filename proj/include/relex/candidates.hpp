#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relex/corpus.hpp"
#include "relex/error.hpp"
#include "relex/schema.hpp"

namespace relex {

inline constexpr std::string_view kNegative = "NEGATIVE";
inline constexpr std::size_t kDefaultMaxCsd = 4;

struct CandidatePair {
  std::string doc_id;
  std::string arg1;  // canonical Arg1 per schema rule
  std::string arg2;
  std::string arg1_type;
  std::string arg2_type;
  std::size_t csd = 0;
  std::string label = std::string(kNegative);

  bool positive() const { return label != kNegative; }
  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

struct CandidateSet {
  std::vector<CandidatePair> pairs;
  std::size_t max_csd = kDefaultMaxCsd;
  std::string schema_name;
  std::map<std::string, std::size_t> counts;  // label -> number of pairs

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  void retally() {
    counts.clear();
    for (const auto& p : pairs) ++counts[p.label];
  }
};

inline std::size_t compute_csd(const Document& document, const Entity& e1, const Entity& e2) {
  std::size_t a = sentence_index_of(document, e1);
  std::size_t b = sentence_index_of(document, e2);
  return a > b ? a - b : b - a;
}

// One pair per unordered entity pair whose types share a schema rule and whose
// CSD is within max_csd. Pairs are ordered by Arg1 offset, then Arg2 offset.
inline CandidateSet generate_candidates(const Document& document, const RelationSchema& schema,
                                        std::size_t max_csd = kDefaultMaxCsd) {
  CandidateSet out;
  out.max_csd = max_csd;
  out.schema_name = schema.name();
  auto ordered = entities_by_offset(document);
  std::vector<std::size_t> sentence(ordered.size());
  for (std::size_t i = 0; i < ordered.size(); ++i) sentence[i] = sentence_index_of(document, *ordered[i]);

  struct Keyed { std::size_t s1, s2; CandidatePair pair; };
  std::vector<Keyed> keyed;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    for (std::size_t j = i + 1; j < ordered.size(); ++j) {
      std::size_t csd = sentence[i] > sentence[j] ? sentence[i] - sentence[j] : sentence[j] - sentence[i];
      if (csd > max_csd) continue;
      const Entity* a = ordered[i];
      const Entity* b = ordered[j];
      auto matches = compatible_categories(schema, a->semantic_type, b->semantic_type);
      if (matches.empty()) continue;
      if (a->semantic_type == b->semantic_type && !schema.self_tiebreak()) {
        fail(ErrorCode::AmbiguousRole, document.doc_id + ": cannot order same-type pair " +
                                           a->entity_id + ", " + b->entity_id + " (" +
                                           a->semantic_type + ")");
      }
      // ordered[] is offset-sorted, so a is the earlier entity for the tiebreak.
      if (a->semantic_type != matches.front().arg1_type) std::swap(a, b);
      keyed.push_back({a->start, b->start,
                       {document.doc_id, a->entity_id, b->entity_id, a->semantic_type,
                        b->semantic_type, csd, std::string(kNegative)}});
    }
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& x, const Keyed& y) {
    return std::tie(x.s1, x.s2, x.pair.arg1, x.pair.arg2) <
           std::tie(y.s1, y.s2, y.pair.arg1, y.pair.arg2);
  });
  for (auto& k : keyed) out.pairs.push_back(std::move(k.pair));
  out.retally();
  return out;
}

// Concatenates per-document candidate sets in document order.
inline CandidateSet generate_candidates(std::span<const Document> documents,
                                        const RelationSchema& schema,
                                        std::size_t max_csd = kDefaultMaxCsd) {
  CandidateSet out;
  out.max_csd = max_csd;
  out.schema_name = schema.name();
  for (const auto& doc : documents) {
    auto part = generate_candidates(doc, schema, max_csd);
    out.pairs.insert(out.pairs.end(), std::make_move_iterator(part.pairs.begin()),
                     std::make_move_iterator(part.pairs.end()));
  }
  out.retally();
  return out;
}

enum class SkipReason { CsdExceeded, SchemaIncompatible };

struct SkippedGold {
  std::string doc_id;
  GoldRelation relation;
  SkipReason reason = SkipReason::SchemaIncompatible;
};

struct LabelResult {
  CandidateSet candidates;
  std::vector<SkippedGold> skipped;
  std::size_t duplicate_gold = 0;  // identical gold relations collapsed before labeling
};

namespace detail {

using PairKey = std::tuple<std::string, std::string, std::string>;  // doc, min id, max id

inline PairKey pair_key(const std::string& doc, const std::string& a, const std::string& b) {
  return a < b ? PairKey{doc, a, b} : PairKey{doc, b, a};
}

}  // namespace detail

// Assigns gold categories to matching pairs (unordered match) and NEGATIVE to
// the rest. Gold that no candidate covers is returned in `skipped`.
inline LabelResult label_candidates(const CandidateSet& candidate_set,
                                    std::span<const Document> documents) {
  LabelResult result;
  result.candidates = candidate_set;
  std::map<detail::PairKey, std::size_t> index;
  for (std::size_t i = 0; i < result.candidates.pairs.size(); ++i) {
    auto& p = result.candidates.pairs[i];
    p.label = std::string(kNegative);
    index[detail::pair_key(p.doc_id, p.arg1, p.arg2)] = i;
  }
  for (const auto& doc : documents) {
    std::map<detail::PairKey, const GoldRelation*> seen;
    for (const auto& rel : doc.gold_relations) {
      auto key = detail::pair_key(doc.doc_id, rel.arg1, rel.arg2);
      auto [it, inserted] = seen.emplace(key, &rel);
      if (!inserted) {
        if (it->second->category != rel.category) {
          fail(ErrorCode::ConflictingGold, doc.doc_id + ": " + it->second->relation_id + " (" +
                                               it->second->category + ") and " + rel.relation_id +
                                               " (" + rel.category + ") share an entity pair");
        }
        ++result.duplicate_gold;
        continue;
      }
      auto hit = index.find(key);
      const Entity& e1 = doc.entity(rel.arg1);
      const Entity& e2 = doc.entity(rel.arg2);
      if (hit == index.end()) {
        SkipReason reason = compute_csd(doc, e1, e2) > candidate_set.max_csd
                                ? SkipReason::CsdExceeded
                                : SkipReason::SchemaIncompatible;
        result.skipped.push_back({doc.doc_id, rel, reason});
        continue;
      }
      auto& pair = result.candidates.pairs[hit->second];
      pair.label = rel.category;
    }
  }
  result.candidates.retally();
  return result;
}

inline LabelResult label_candidates(const CandidateSet& candidate_set, const Document& document) {
  return label_candidates(candidate_set, std::span<const Document>(&document, 1));
}

// Labels and also checks that each gold category is licensed for its pair's
// types; unlicensed gold is skipped and its pair stays NEGATIVE.
inline LabelResult label_candidates(const CandidateSet& candidate_set,
                                    std::span<const Document> documents,
                                    const RelationSchema& schema) {
  LabelResult result = label_candidates(candidate_set, documents);
  std::map<detail::PairKey, const GoldRelation*> gold;
  for (const auto& doc : documents) {
    for (const auto& rel : doc.gold_relations) gold.emplace(detail::pair_key(doc.doc_id, rel.arg1, rel.arg2), &rel);
  }
  for (auto& p : result.candidates.pairs) {
    if (!p.positive()) continue;
    auto matches = compatible_categories(schema, p.arg1_type, p.arg2_type);
    bool licensed = std::any_of(matches.begin(), matches.end(),
                                [&](const CategoryMatch& m) { return m.category == p.label; });
    if (licensed) continue;
    const GoldRelation* rel = gold.at(detail::pair_key(p.doc_id, p.arg1, p.arg2));
    result.skipped.push_back({p.doc_id, *rel, SkipReason::SchemaIncompatible});
    p.label = std::string(kNegative);
  }
  result.candidates.retally();
  return result;
}

inline std::map<std::size_t, CandidateSet> stratify_by_csd(const CandidateSet& candidate_set) {
  std::map<std::size_t, CandidateSet> out;
  for (const auto& p : candidate_set.pairs) {
    auto [it, inserted] = out.try_emplace(p.csd);
    if (inserted) {
      it->second.max_csd = candidate_set.max_csd;
      it->second.schema_name = candidate_set.schema_name;
    }
    it->second.pairs.push_back(p);
  }
  for (auto& [csd, part] : out) part.retally();
  return out;
}

// Keeps every positive and at most `cap` negatives per CSD value, chosen by a
// seeded shuffle; surviving pairs keep their original order.
inline CandidateSet cap_negatives(const CandidateSet& candidate_set, std::size_t cap,
                                  std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> negatives;
  for (std::size_t i = 0; i < candidate_set.pairs.size(); ++i) {
    if (!candidate_set.pairs[i].positive()) negatives[candidate_set.pairs[i].csd].push_back(i);
  }
  std::vector<bool> keep(candidate_set.pairs.size(), true);
  std::mt19937_64 rng(seed);
  for (auto& [csd, idx] : negatives) {
    if (idx.size() <= cap) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = cap; k < idx.size(); ++k) keep[idx[k]] = false;
  }
  CandidateSet out = candidate_set;
  out.pairs.clear();
  for (std::size_t i = 0; i < candidate_set.pairs.size(); ++i) {
    if (keep[i]) out.pairs.push_back(candidate_set.pairs[i]);
  }
  out.retally();
  return out;
}

// --- candidate dump (JSON lines, fixed field order) -------------------------

inline std::string candidate_record(const CandidatePair& p) {
  nlohmann::ordered_json j;
  j["doc_id"] = p.doc_id;
  j["arg1"] = p.arg1;
  j["arg2"] = p.arg2;
  j["arg1_type"] = p.arg1_type;
  j["arg2_type"] = p.arg2_type;
  j["csd"] = p.csd;
  j["label"] = p.label;
  return j.dump();
}

inline std::string dump_candidates(const CandidateSet& candidate_set) {
  std::string out;
  for (const auto& p : candidate_set.pairs) out += candidate_record(p) + "\n";
  return out;
}

inline CandidateSet parse_candidate_dump(std::string_view dump) {
  CandidateSet out;
  std::size_t line_no = 0;
  std::size_t max_csd = 0;
  for (std::string_view line : text::lines(dump)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      CandidatePair p{j.at("doc_id").get<std::string>(), j.at("arg1").get<std::string>(),
                      j.at("arg2").get<std::string>(), j.at("arg1_type").get<std::string>(),
                      j.at("arg2_type").get<std::string>(), j.at("csd").get<std::size_t>(),
                      j.at("label").get<std::string>()};
      max_csd = std::max(max_csd, p.csd);
      out.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::MalformedLine, "candidate dump line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  out.max_csd = max_csd;
  out.retally();
  return out;
}

}  // namespace relex

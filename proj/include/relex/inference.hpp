#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relex/candidates.hpp"
#include "relex/corpus.hpp"
#include "relex/encoding.hpp"
#include "relex/error.hpp"
#include "relex/model.hpp"
#include "relex/schema.hpp"

namespace relex {

struct PredictedRelation {
  std::string doc_id;
  std::string arg1;
  std::string arg2;
  std::string category;
  double score = 0.0;  // probability of the chosen class (POSITIVE for binary)

  friend bool operator==(const PredictedRelation&, const PredictedRelation&) = default;
};

// Rule step of the binary strategy: the category follows from the entity types.
inline std::string infer_category(const std::string& arg1_type, const std::string& arg2_type,
                                  const RelationSchema& schema) {
  auto matches = compatible_categories(schema, arg1_type, arg2_type);
  if (matches.empty()) {
    fail(ErrorCode::AmbiguousCategory, "no category defined for (" + arg1_type + ", " + arg2_type + ")");
  }
  if (matches.size() == 1) return matches.front().category;
  for (const auto& preferred : schema.priority()) {
    for (const auto& m : matches) {
      if (m.category == preferred) return m.category;
    }
  }
  fail(ErrorCode::AmbiguousCategory, "(" + arg1_type + ", " + arg2_type + ") allows " +
                                         std::to_string(matches.size()) + " categories and no priority list applies");
}

inline std::string route_by_csd(const CandidatePair& pair, const ModelBundle& bundle) {
  if (bundle.regime == Regime::kUnified) {
    if (!bundle.groups.count(std::string(kUnifiedGroup))) fail(ErrorCode::MissingGroup, "bundle has no ALL group");
    return std::string(kUnifiedGroup);
  }
  for (const auto& [key, g] : bundle.groups) {
    if (g.csd.contains(pair.csd)) return key;
  }
  for (const auto& [key, r] : bundle.skipped_groups) {
    if (r.contains(pair.csd)) return key;
  }
  fail(ErrorCode::MissingGroup, "no group for csd " + std::to_string(pair.csd) + " (pair " + pair.doc_id +
                                    ":" + pair.arg1 + ":" + pair.arg2 + ")");
}

struct PredictOptions {
  // Binary: POSITIVE iff p(POSITIVE) >= threshold. Multi-class: positive iff
  // 1 - p(NEGATIVE) >= threshold, category by argmax over the rest.
  std::optional<double> positive_threshold;
};

namespace detail {

inline std::size_t argmax(const RowVector& p) {
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

}  // namespace detail

// Classifies one pair with one group model; nullopt when judged unrelated.
inline std::optional<PredictedRelation> classify_pair(const CandidatePair& pair, const Document& document,
                                                      const ModelGroup& group, const Tokenizer& tokenizer,
                                                      Strategy strategy, const RelationSchema& schema,
                                                      const PredictOptions& options = {}) {
  auto inst = build_instance(pair, document, tokenizer, group.config.max_len);
  RowVector probs = instance_probabilities(inst, *group.encoder, group.head);
  if (strategy == Strategy::kBinary) {
    double pos = probs(1);
    bool related = options.positive_threshold ? pos >= *options.positive_threshold : detail::argmax(probs) == 1;
    if (!related) return std::nullopt;
    return PredictedRelation{pair.doc_id, pair.arg1, pair.arg2,
                             infer_category(pair.arg1_type, pair.arg2_type, schema), pos};
  }
  std::size_t best = detail::argmax(probs);
  if (options.positive_threshold) {
    if (1.0 - probs(0) < *options.positive_threshold) return std::nullopt;
    RowVector rest = probs.tail(probs.size() - 1);
    best = detail::argmax(rest) + 1;
  }
  if (best == 0) return std::nullopt;
  return PredictedRelation{pair.doc_id, pair.arg1, pair.arg2, group.head.classes()[best],
                           probs(static_cast<Eigen::Index>(best))};
}

// Applies the routed group model to each pair and keeps those classified as
// related. Pairs routed to a skipped group yield no prediction.
inline std::vector<PredictedRelation> predict(std::span<const CandidatePair> pairs, const DocumentIndex& documents,
                                              const ModelBundle& bundle, const RelationSchema& schema,
                                              const PredictOptions& options = {}) {
  check_binary_schema(bundle.strategy, schema);
  std::vector<PredictedRelation> out;
  for (const auto& pair : pairs) {
    const std::string key = route_by_csd(pair, bundle);
    if (bundle.skipped_groups.count(key)) continue;
    auto rel = classify_pair(pair, lookup_document(documents, pair.doc_id), bundle.group(key), *bundle.tokenizer,
                             bundle.strategy, schema, options);
    if (rel) out.push_back(std::move(*rel));
  }
  return out;
}

// --- output -------------------------------------------------------------------

inline std::map<std::string, std::vector<PredictedRelation>> group_by_document(
    std::span<const PredictedRelation> relations) {
  std::map<std::string, std::vector<PredictedRelation>> out;
  for (const auto& r : relations) out[r.doc_id].push_back(r);
  for (auto& [doc, rels] : out) {
    std::stable_sort(rels.begin(), rels.end(), [](const PredictedRelation& a, const PredictedRelation& b) {
      return std::tie(a.arg1, a.arg2, a.category) < std::tie(b.arg1, b.arg2, b.category);
    });
  }
  return out;
}

// One R-line per prediction, numbered R1, R2, ... in (arg1, arg2, category)
// order. Entity ids refer to the gold annotation file of the same document.
inline std::string prediction_standoff(std::span<const PredictedRelation> relations) {
  std::string out;
  std::vector<PredictedRelation> sorted(relations.begin(), relations.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const PredictedRelation& a, const PredictedRelation& b) {
    return std::tie(a.arg1, a.arg2, a.category) < std::tie(b.arg1, b.arg2, b.category);
  });
  std::size_t n = 0;
  for (const auto& r : sorted) {
    out += relation_line({"R" + std::to_string(++n), r.category, r.arg1, r.arg2});
  }
  return out;
}

inline std::string scores_line(const PredictedRelation& r) {
  return r.doc_id + "\t" + r.arg1 + "\t" + r.arg2 + "\t" + r.category + "\t" + text::fixed(r.score, 6) + "\n";
}

// Writes <doc_id>.ann for every document (empty relation list included) and
// scores.tsv; returns the number of R-lines written.
inline std::size_t write_predictions(std::span<const PredictedRelation> relations,
                                     std::span<const Document> documents, const std::filesystem::path& out_dir) {
  auto by_doc = group_by_document(relations);
  std::size_t lines = 0;
  std::string scores;
  for (const auto& doc : documents) {
    auto it = by_doc.find(doc.doc_id);
    std::span<const PredictedRelation> rels;
    if (it != by_doc.end()) rels = it->second;
    write_file(out_dir / (doc.doc_id + ".ann"), prediction_standoff(rels));
    for (const auto& r : rels) scores += scores_line(r);
    lines += rels.size();
  }
  for (const auto& [doc_id, rels] : by_doc) {
    bool known = std::any_of(documents.begin(), documents.end(), [&](const Document& d) { return d.doc_id == doc_id; });
    if (!known) fail(ErrorCode::IOFailure, "prediction for unknown document " + doc_id);
  }
  write_file(out_dir / "scores.tsv", scores);
  return lines;
}

}  // namespace relex

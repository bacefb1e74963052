#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "relex/candidates.hpp"
#include "relex/corpus.hpp"
#include "relex/error.hpp"
#include "relex/inference.hpp"

namespace relex {

inline constexpr std::string_view kOverall = "OVERALL";

struct Metrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  // Any ratio with a zero denominator is 0.
  void finalize() {
    precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }

  Metrics& operator+=(const Metrics& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    finalize();
    return *this;
  }
};

struct EvalReport {
  std::map<std::string, Metrics> per_category;
  Metrics micro;
  std::size_t skipped_gold_count = 0;
  std::size_t duplicates_collapsed = 0;  // repeated identical relations dropped before matching
};

// A relation reduced to what strict scoring compares: document, unordered
// entity pair, category.
struct RelationKey {
  std::string doc_id;
  std::string first;   // lexicographically smaller entity id
  std::string second;
  std::string category;

  RelationKey(std::string doc, const std::string& a, const std::string& b, std::string cat)
      : doc_id(std::move(doc)), first(std::min(a, b)), second(std::max(a, b)), category(std::move(cat)) {}

  friend auto operator<=>(const RelationKey&, const RelationKey&) = default;
};

// Strict micro scoring of two relation collections. Each collection is reduced
// to a set first; the collapsed duplicates are counted.
inline EvalReport score_keys(const std::vector<RelationKey>& gold, const std::vector<RelationKey>& predicted) {
  EvalReport report;
  std::set<RelationKey> gold_set(gold.begin(), gold.end());
  std::set<RelationKey> pred_set(predicted.begin(), predicted.end());
  report.duplicates_collapsed = (gold.size() - gold_set.size()) + (predicted.size() - pred_set.size());
  for (const auto& p : pred_set) {
    auto& m = report.per_category[p.category];
    if (gold_set.count(p)) {
      ++m.tp;
    } else {
      ++m.fp;
    }
  }
  for (const auto& g : gold_set) {
    if (!pred_set.count(g)) ++report.per_category[g.category].fn;
  }
  for (auto& [cat, m] : report.per_category) {
    m.finalize();
    report.micro.tp += m.tp;
    report.micro.fp += m.fp;
    report.micro.fn += m.fn;
  }
  report.micro.finalize();
  return report;
}

inline std::vector<RelationKey> gold_keys(std::span<const Document> documents) {
  std::vector<RelationKey> out;
  for (const auto& d : documents) {
    for (const auto& r : d.gold_relations) out.emplace_back(d.doc_id, r.arg1, r.arg2, r.category);
  }
  return out;
}

inline void check_entity_space(std::span<const Document> documents, std::span<const PredictedRelation> predicted) {
  auto index = index_documents(documents);
  for (const auto& p : predicted) {
    auto it = index.find(p.doc_id);
    if (it == index.end()) fail(ErrorCode::EntitySpaceMismatch, "prediction for unknown document " + p.doc_id);
    for (const auto* id : {&p.arg1, &p.arg2}) {
      if (!it->second->entities.count(*id)) {
        fail(ErrorCode::EntitySpaceMismatch, p.doc_id + ": prediction references entity " + *id +
                                                 " absent from the gold annotations");
      }
    }
  }
}

// Gold entities are shared, so matching is by entity id; a relation is a true
// positive only if pair and category both match.
inline EvalReport score(std::span<const Document> gold, std::span<const PredictedRelation> predicted) {
  check_entity_space(gold, predicted);
  std::vector<RelationKey> pred;
  for (const auto& p : predicted) pred.emplace_back(p.doc_id, p.arg1, p.arg2, p.category);
  return score_keys(gold_keys(gold), pred);
}

// Scores each CSD bucket separately; the buckets partition both gold and predictions.
inline std::map<std::size_t, EvalReport> per_csd_breakdown(std::span<const Document> gold,
                                                           std::span<const PredictedRelation> predicted) {
  check_entity_space(gold, predicted);
  auto index = index_documents(gold);
  std::map<std::size_t, std::pair<std::vector<RelationKey>, std::vector<RelationKey>>> buckets;
  auto csd_of = [&](const std::string& doc_id, const std::string& a, const std::string& b) {
    const Document& d = *index.at(doc_id);
    return compute_csd(d, d.entity(a), d.entity(b));
  };
  for (const auto& d : gold) {
    for (const auto& r : d.gold_relations) {
      buckets[csd_of(d.doc_id, r.arg1, r.arg2)].first.emplace_back(d.doc_id, r.arg1, r.arg2, r.category);
    }
  }
  for (const auto& p : predicted) {
    buckets[csd_of(p.doc_id, p.arg1, p.arg2)].second.emplace_back(p.doc_id, p.arg1, p.arg2, p.category);
  }
  std::map<std::size_t, EvalReport> out;
  for (const auto& [csd, sets] : buckets) out.emplace(csd, score_keys(sets.first, sets.second));
  return out;
}

// --- report formats -------------------------------------------------------------

inline std::string format_table(const EvalReport& report) {
  std::size_t width = kOverall.size();
  for (const auto& [cat, m] : report.per_category) width = std::max(width, cat.size());
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  auto lpad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  auto row = [&](const std::string& name, const Metrics& m) {
    return pad(name, width) + "  " + lpad(std::to_string(m.tp), 6) + "  " + lpad(std::to_string(m.fp), 6) +
           "  " + lpad(std::to_string(m.fn), 6) + "  " + lpad(text::fixed(m.precision, 4), 9) + "  " +
           lpad(text::fixed(m.recall, 4), 9) + "  " + lpad(text::fixed(m.f1, 4), 9) + "\n";
  };
  std::string out = pad("category", width) + "  " + lpad("tp", 6) + "  " + lpad("fp", 6) + "  " + lpad("fn", 6) +
                    "  " + lpad("precision", 9) + "  " + lpad("recall", 9) + "  " + lpad("f1", 9) + "\n";
  for (const auto& [cat, m] : report.per_category) out += row(cat, m);
  out += row(std::string(kOverall), report.micro);
  if (report.skipped_gold_count) out += "skipped gold (not candidates): " + std::to_string(report.skipped_gold_count) + "\n";
  if (report.duplicates_collapsed) out += "duplicates collapsed: " + std::to_string(report.duplicates_collapsed) + "\n";
  return out;
}

inline std::string format_jsonl(const EvalReport& report) {
  auto line = [](const std::string& name, const Metrics& m) {
    nlohmann::ordered_json j;
    j["category"] = name;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["fn"] = m.fn;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    return j.dump() + "\n";
  };
  std::string out;
  for (const auto& [cat, m] : report.per_category) out += line(cat, m);
  out += line(std::string(kOverall), report.micro);
  return out;
}

// Reads predictions for each gold document from <dir>/<doc_id>.ann. A missing
// file means no predictions for that document.
inline std::vector<PredictedRelation> load_predictions(const std::filesystem::path& dir,
                                                       std::span<const Document> gold) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::IOFailure, "not a directory: " + dir.string());
  std::vector<PredictedRelation> out;
  for (const auto& d : gold) {
    auto path = dir / (d.doc_id + ".ann");
    if (!std::filesystem::exists(path)) continue;
    for (auto& r : parse_relations(read_file(path), d.doc_id)) {
      out.push_back({d.doc_id, r.arg1, r.arg2, r.category, 1.0});
    }
  }
  return out;
}

}  // namespace relex

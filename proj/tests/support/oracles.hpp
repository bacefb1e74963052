#pragma once

// Brute-force reference computations. None of these call into the code under
// test beyond plain data access.

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "support/synthetic.hpp"

namespace relex::synth {

using CandidateTriple = std::tuple<std::string, std::string, std::size_t>;  // arg1, arg2, csd

// All ordered entity pairs, kept when a rule licenses them and the recorded
// sentence distance is within max_csd.
inline std::set<CandidateTriple> oracle_candidates(const SyntheticDoc& d, const std::vector<TypeRule>& rules,
                                                   std::size_t max_csd) {
  std::set<CandidateTriple> out;
  for (const auto& [a, ea] : d.doc.entities) {
    for (const auto& [b, eb] : d.doc.entities) {
      if (a == b) continue;
      bool licensed = std::any_of(rules.begin(), rules.end(), [&](const TypeRule& r) {
        return r.arg1_type == ea.semantic_type && r.arg2_type == eb.semantic_type;
      });
      if (!licensed) continue;
      std::size_t sa = d.sentence_of.at(a), sb = d.sentence_of.at(b);
      std::size_t csd = sa > sb ? sa - sb : sb - sa;
      if (csd <= max_csd) out.emplace(a, b, csd);
    }
  }
  return out;
}

// Counts sentence terminators ('.', '!', '?' followed by whitespace) strictly
// between two offsets.
inline std::size_t oracle_boundaries_between(const std::string& text, std::size_t a, std::size_t b) {
  if (a > b) std::swap(a, b);
  std::size_t n = 0;
  for (std::size_t i = a; i < b; ++i) {
    char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && i + 1 < text.size() &&
        (text[i + 1] == ' ' || text[i + 1] == '\n' || text[i + 1] == '\t')) {
      ++n;
    }
  }
  return n;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Strict matching over "doc|lo|hi|category" strings, via sorted-range algebra.
inline Counts oracle_score(std::vector<std::string> gold, std::vector<std::string> pred) {
  std::sort(gold.begin(), gold.end());
  gold.erase(std::unique(gold.begin(), gold.end()), gold.end());
  std::sort(pred.begin(), pred.end());
  pred.erase(std::unique(pred.begin(), pred.end()), pred.end());
  std::vector<std::string> common;
  std::set_intersection(gold.begin(), gold.end(), pred.begin(), pred.end(), std::back_inserter(common));
  return {common.size(), pred.size() - common.size(), gold.size() - common.size()};
}

inline std::string oracle_key(const std::string& doc, const std::string& a, const std::string& b,
                              const std::string& cat) {
  return doc + "|" + std::min(a, b) + "|" + std::max(a, b) + "|" + cat;
}

inline double oracle_f1(const Counts& c) {
  double p = c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  double r = c.tp + c.fn ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

}  // namespace relex::synth

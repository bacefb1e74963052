#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "relex/error.hpp"
#include "relex/text.hpp"

namespace relex {

struct SentenceSpan {
  std::size_t index = 0;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

struct Entity {
  std::string entity_id;
  std::string semantic_type;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface_text;

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct GoldRelation {
  std::string relation_id;
  std::string category;
  std::string arg1;
  std::string arg2;

  friend bool operator==(const GoldRelation&, const GoldRelation&) = default;
};

struct Document {
  std::string doc_id;
  std::string text;
  std::vector<SentenceSpan> sentences;
  std::map<std::string, Entity> entities;
  std::vector<GoldRelation> gold_relations;

  const Entity& entity(const std::string& id) const {
    auto it = entities.find(id);
    if (it == entities.end()) fail(ErrorCode::DanglingReference, doc_id + ": unknown entity " + id);
    return it->second;
  }
};

struct SegmenterOptions {
  bool newline_is_boundary = true;
};

// Rule-based splitter: a sentence ends after '.', '!' or '?' when followed by
// whitespace (or end of text), and at every '\n' when newline_is_boundary.
// Spans never include leading or trailing whitespace.
inline std::vector<SentenceSpan> segment_sentences(std::string_view text,
                                                   const SegmenterOptions& options = {}) {
  std::vector<SentenceSpan> spans;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto emit = [&](std::size_t begin, std::size_t end) {
    while (end > begin && text::is_space(text[end - 1])) --end;
    if (end > begin) spans.push_back({spans.size(), begin, end});
  };
  while (i < n) {
    while (i < n && text::is_space(text[i])) ++i;
    if (i >= n) break;
    std::size_t begin = i;
    std::size_t end = n;
    for (std::size_t j = i; j < n; ++j) {
      char c = text[j];
      if (c == '\n' && options.newline_is_boundary) {
        end = j;
        break;
      }
      if ((c == '.' || c == '!' || c == '?') && (j + 1 == n || text::is_space(text[j + 1]))) {
        end = j + 1;
        break;
      }
    }
    emit(begin, end);
    i = end;
  }
  return spans;
}

inline std::size_t sentence_index_of(const std::vector<SentenceSpan>& sentences,
                                     std::size_t offset) {
  auto it = std::upper_bound(sentences.begin(), sentences.end(), offset,
                             [](std::size_t off, const SentenceSpan& s) { return off < s.start; });
  if (it == sentences.begin() || offset >= std::prev(it)->end) {
    fail(ErrorCode::UnassignedEntity, "no sentence contains offset " + std::to_string(offset));
  }
  return std::prev(it)->index;
}

// Entities spanning a boundary belong to the sentence holding their start.
inline std::size_t sentence_index_of(const Document& document, const Entity& entity) {
  return sentence_index_of(document.sentences, entity.start);
}

struct ParseOptions {
  SegmenterOptions segmenter;
  // Skip BRAT record kinds other than T and R (attributes, notes, events).
  bool ignore_other_records = false;
};

namespace detail {

inline std::string normalize_ws(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (text::is_space(c)) c = ' ';
  }
  return out;
}

[[noreturn]] inline void malformed(std::string_view doc_id, std::size_t line_no,
                                   const std::string& why) {
  fail(ErrorCode::MalformedLine,
       std::string(doc_id) + ":" + std::to_string(line_no) + ": " + why);
}

inline bool valid_id(std::string_view id, char prefix) {
  return id.size() >= 2 && id.front() == prefix &&
         id.find_first_of(" \t") == std::string_view::npos;
}

// "Category Arg1:Tx Arg2:Ty" body of an R-line.
inline GoldRelation parse_relation_body(std::string_view id, std::string_view body,
                                        std::string_view doc_id, std::size_t line_no) {
  auto fields = text::split_ws(body);
  if (fields.size() != 3) malformed(doc_id, line_no, "relation needs category and two arguments");
  auto arg = [&](std::string_view f, std::string_view role) {
    if (f.substr(0, role.size()) != role || f.size() == role.size()) {
      malformed(doc_id, line_no, "expected " + std::string(role) + "<entity id>");
    }
    return std::string(f.substr(role.size()));
  };
  GoldRelation rel{std::string(id), std::string(fields[0]), arg(fields[1], "Arg1:"),
                   arg(fields[2], "Arg2:")};
  if (rel.arg1 == rel.arg2) malformed(doc_id, line_no, "relation arguments must differ");
  return rel;
}

}  // namespace detail

// Parses T and R records; entity surfaces are checked against the text with
// whitespace normalized (BRAT flattens newlines inside spans).
inline Document parse_standoff(std::string_view annotation_text, std::string_view document_text,
                               std::string_view doc_id, const ParseOptions& options = {}) {
  Document doc;
  doc.doc_id = std::string(doc_id);
  doc.text = std::string(document_text);
  doc.sentences = segment_sentences(doc.text, options.segmenter);

  std::vector<std::pair<std::size_t, GoldRelation>> pending;
  std::set<std::string> relation_ids;
  std::size_t line_no = 0;
  for (std::string_view line : text::lines(annotation_text)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto cols = text::split(line, '\t');
    // BRAT tools sometimes emit a trailing tab on R-lines.
    if (cols.size() > 2 && cols.back().empty() && line.front() == 'R') cols.pop_back();
    char kind = line.front();
    if (kind == 'T') {
      if (cols.size() != 3) detail::malformed(doc_id, line_no, "entity needs three tab fields");
      if (!detail::valid_id(cols[0], 'T')) detail::malformed(doc_id, line_no, "bad entity id");
      if (cols[1].find(';') != std::string_view::npos) {
        detail::malformed(doc_id, line_no, "discontinuous spans are not supported");
      }
      auto fields = text::split_ws(cols[1]);
      if (fields.size() != 3) detail::malformed(doc_id, line_no, "entity needs type, start, end");
      auto start = text::parse_int<std::size_t>(fields[1]);
      auto end = text::parse_int<std::size_t>(fields[2]);
      if (!start || !end) detail::malformed(doc_id, line_no, "entity offsets must be integers");
      if (*start >= *end) detail::malformed(doc_id, line_no, "entity start must precede end");
      if (*end > doc.text.size()) {
        fail(ErrorCode::OffsetOutOfRange, std::string(doc_id) + ":" + std::to_string(line_no) +
                                              ": span " + std::to_string(*start) + ".." +
                                              std::to_string(*end) + " exceeds text length " +
                                              std::to_string(doc.text.size()));
      }
      std::string_view slice = std::string_view(doc.text).substr(*start, *end - *start);
      if (detail::normalize_ws(slice) != detail::normalize_ws(cols[2])) {
        detail::malformed(doc_id, line_no, "surface text does not match document text");
      }
      if (text::is_space(slice.front())) {
        detail::malformed(doc_id, line_no, "entity span starts on whitespace");
      }
      Entity e{std::string(cols[0]), std::string(fields[0]), *start, *end, std::string(slice)};
      if (!doc.entities.emplace(e.entity_id, e).second) {
        detail::malformed(doc_id, line_no, "duplicate entity id " + e.entity_id);
      }
    } else if (kind == 'R') {
      if (cols.size() != 2) detail::malformed(doc_id, line_no, "relation needs two tab fields");
      if (!detail::valid_id(cols[0], 'R')) detail::malformed(doc_id, line_no, "bad relation id");
      if (!relation_ids.insert(std::string(cols[0])).second) {
        detail::malformed(doc_id, line_no, "duplicate relation id " + std::string(cols[0]));
      }
      pending.emplace_back(line_no, detail::parse_relation_body(cols[0], cols[1], doc_id, line_no));
    } else if (!options.ignore_other_records) {
      detail::malformed(doc_id, line_no, "unknown record type");
    }
  }
  for (auto& [no, rel] : pending) {
    for (const auto* arg : {&rel.arg1, &rel.arg2}) {
      if (!doc.entities.count(*arg)) {
        fail(ErrorCode::DanglingReference, std::string(doc_id) + ":" + std::to_string(no) +
                                               ": relation " + rel.relation_id +
                                               " references unknown entity " + *arg);
      }
    }
    doc.gold_relations.push_back(std::move(rel));
  }
  return doc;
}

// Only the R-lines of an annotation file; T-lines and other records are skipped.
inline std::vector<GoldRelation> parse_relations(std::string_view annotation_text,
                                                 std::string_view doc_id) {
  std::vector<GoldRelation> out;
  std::size_t line_no = 0;
  for (std::string_view line : text::lines(annotation_text)) {
    ++line_no;
    if (line.empty() || line.front() != 'R') continue;
    auto cols = text::split(line, '\t');
    if (cols.size() > 2 && cols.back().empty()) cols.pop_back();
    if (cols.size() != 2) detail::malformed(doc_id, line_no, "relation needs two tab fields");
    out.push_back(detail::parse_relation_body(cols[0], cols[1], doc_id, line_no));
  }
  return out;
}

inline std::vector<const Entity*> entities_by_offset(const Document& doc) {
  std::vector<const Entity*> out;
  out.reserve(doc.entities.size());
  for (const auto& [id, e] : doc.entities) out.push_back(&e);
  std::sort(out.begin(), out.end(), [](const Entity* a, const Entity* b) {
    if (a->start != b->start) return a->start < b->start;
    if (a->end != b->end) return a->end < b->end;
    return a->entity_id < b->entity_id;
  });
  return out;
}

inline std::string entity_line(const Entity& e) {
  std::string surface = detail::normalize_ws(e.surface_text);
  return e.entity_id + "\t" + e.semantic_type + " " + std::to_string(e.start) + " " +
         std::to_string(e.end) + "\t" + surface + "\n";
}

inline std::string relation_line(const GoldRelation& r) {
  return r.relation_id + "\t" + r.category + " Arg1:" + r.arg1 + " Arg2:" + r.arg2 + "\n";
}

inline std::string to_standoff(const Document& doc) {
  std::string out;
  for (const Entity* e : entities_by_offset(doc)) out += entity_line(*e);
  for (const auto& r : doc.gold_relations) out += relation_line(r);
  return out;
}

// --- filesystem ------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IOFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IOFailure, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorCode::IOFailure, "short write to " + path.string());
}

// Stems of every <stem>.ann in dir, sorted.
inline std::vector<std::string> annotation_stems(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::IOFailure, "not a directory: " + dir.string());
  std::vector<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ann") {
      stems.push_back(entry.path().stem().string());
    }
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

// Loads every <stem>.ann with its sibling <stem>.txt, ordered by doc_id.
inline std::vector<Document> load_corpus_dir(const std::filesystem::path& dir,
                                             const ParseOptions& options = {}) {
  std::vector<Document> docs;
  for (const auto& stem : annotation_stems(dir)) {
    auto txt = dir / (stem + ".txt");
    if (!std::filesystem::exists(txt)) fail(ErrorCode::IOFailure, "missing text file " + txt.string());
    docs.push_back(parse_standoff(read_file(dir / (stem + ".ann")), read_file(txt), stem, options));
  }
  return docs;
}

inline void write_document(const std::filesystem::path& dir, const Document& doc) {
  write_file(dir / (doc.doc_id + ".txt"), doc.text);
  write_file(dir / (doc.doc_id + ".ann"), to_standoff(doc));
}

// --- thin converter ----------------------------------------------------------
//
// One JSON object per document:
//   {"doc_id": "...", "text": "...",
//    "entities":  [{"id": "T1", "type": "Drug", "start": 0, "end": 7}, ...],
//    "relations": [{"id": "R1", "category": "...", "arg1": "T1", "arg2": "T2"}, ...]}
// The object is rendered to standoff and parsed, so it obeys the same checks.
inline Document document_from_json(const nlohmann::json& j, const ParseOptions& options = {}) {
  try {
    std::string doc_id = j.at("doc_id").get<std::string>();
    std::string body = j.at("text").get<std::string>();
    std::string ann;
    for (const auto& e : j.value("entities", nlohmann::json::array())) {
      auto start = e.at("start").get<std::size_t>();
      auto end = e.at("end").get<std::size_t>();
      std::string surface = start < end && end <= body.size() ? body.substr(start, end - start) : "";
      ann += entity_line({e.at("id").get<std::string>(), e.at("type").get<std::string>(), start, end,
                          surface});
    }
    for (const auto& r : j.value("relations", nlohmann::json::array())) {
      ann += relation_line({r.at("id").get<std::string>(), r.at("category").get<std::string>(),
                            r.at("arg1").get<std::string>(), r.at("arg2").get<std::string>()});
    }
    return parse_standoff(ann, body, doc_id, options);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::MalformedLine, std::string("converter: ") + ex.what());
  }
}

}  // namespace relex

#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "relex/error.hpp"
#include "relex/text.hpp"

namespace relex {

// A category licensed for a type pair, with the role order the schema fixes.
struct CategoryMatch {
  std::string category;
  std::string arg1_type;
  std::string arg2_type;

  friend bool operator==(const CategoryMatch&, const CategoryMatch&) = default;
};

class RelationSchema {
 public:
  using TypePair = std::pair<std::string, std::string>;

  RelationSchema() = default;
  explicit RelationSchema(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  const std::map<TypePair, std::vector<std::string>>& rules() const { return rules_; }
  const std::set<std::string>& categories() const { return categories_; }
  const std::vector<std::string>& priority() const { return priority_; }
  // When set, same-type pairs give Arg1 to the earlier-offset entity.
  bool self_tiebreak() const { return self_tiebreak_; }

  bool unambiguous() const {
    return std::all_of(rules_.begin(), rules_.end(),
                       [](const auto& kv) { return kv.second.size() == 1; });
  }

  // Each unordered type pair may carry one rule; the declared order is canonical.
  void add_rule(const std::string& arg1_type, const std::string& arg2_type,
                std::vector<std::string> categories) {
    if (arg1_type.empty() || arg2_type.empty() || categories.empty()) {
      fail(ErrorCode::MalformedSchema, "rule needs two types and at least one category");
    }
    if (rules_.count({arg1_type, arg2_type}) || rules_.count({arg2_type, arg1_type})) {
      fail(ErrorCode::DuplicateRule, "rule for (" + arg1_type + ", " + arg2_type + ") already defined");
    }
    std::set<std::string> seen;
    for (const auto& c : categories) {
      if (c.empty()) fail(ErrorCode::MalformedSchema, "empty category name");
      if (!seen.insert(c).second) fail(ErrorCode::MalformedSchema, "category repeated in rule: " + c);
      categories_.insert(c);
    }
    rules_.emplace(TypePair{arg1_type, arg2_type}, std::move(categories));
  }

  void set_priority(std::vector<std::string> priority) {
    for (const auto& c : priority) {
      if (!categories_.count(c)) fail(ErrorCode::MalformedSchema, "priority names unknown category " + c);
    }
    priority_ = std::move(priority);
  }

  void set_self_tiebreak(bool on) { self_tiebreak_ = on; }

  // Renames categories (e.g. to a corpus's literal label strings).
  RelationSchema with_aliases(const std::map<std::string, std::string>& alias) const {
    auto rename = [&](const std::string& c) {
      auto it = alias.find(c);
      return it == alias.end() ? c : it->second;
    };
    RelationSchema out(name_);
    for (const auto& [pair, cats] : rules_) {
      std::vector<std::string> renamed;
      for (const auto& c : cats) renamed.push_back(rename(c));
      out.add_rule(pair.first, pair.second, std::move(renamed));
    }
    std::vector<std::string> prio;
    for (const auto& c : priority_) prio.push_back(rename(c));
    out.set_priority(std::move(prio));
    out.set_self_tiebreak(self_tiebreak_);
    return out;
  }

 private:
  std::string name_;
  std::map<TypePair, std::vector<std::string>> rules_;
  std::set<std::string> categories_;
  std::vector<std::string> priority_;
  bool self_tiebreak_ = false;
};

// Symmetric lookup: categories declared for (type1, type2) or (type2, type1).
inline std::vector<CategoryMatch> compatible_categories(const RelationSchema& schema,
                                                        const std::string& type1,
                                                        const std::string& type2) {
  std::vector<CategoryMatch> out;
  auto collect = [&](const std::string& a, const std::string& b) {
    auto it = schema.rules().find({a, b});
    if (it == schema.rules().end()) return;
    for (const auto& c : it->second) out.push_back({c, a, b});
  };
  collect(type1, type2);
  if (type1 != type2) collect(type2, type1);
  return out;
}

// MADE1.0: medication with four attributes, two sign/symptom relations and
// severity. Category strings are the relation group names; use with_aliases
// to map onto a distribution's literal labels.
inline RelationSchema made_schema() {
  RelationSchema s("made1.0");
  s.add_rule("Drug", "Dose", {"Dosage"});
  s.add_rule("Drug", "Route", {"Route"});
  s.add_rule("Drug", "Frequency", {"Frequency"});
  s.add_rule("Drug", "Duration", {"Duration"});
  s.add_rule("Drug", "ADE", {"ADE"});
  s.add_rule("Drug", "Indication", {"Indication"});
  s.add_rule("Severity", "SSLIF", {"Severity"});
  return s;
}

// n2c2 2018 track 2: every relation links a drug attribute (Arg1) to a Drug (Arg2).
inline RelationSchema n2c2_schema() {
  RelationSchema s("n2c2");
  for (const char* attr : {"ADE", "Reason", "Strength", "Duration", "Route", "Form", "Dosage",
                           "Frequency"}) {
    s.add_rule(attr, "Drug", {std::string(attr) + "-Drug"});
  }
  return s;
}

inline RelationSchema builtin_schema(std::string_view name) {
  if (name == "made1.0") return made_schema();
  if (name == "n2c2") return n2c2_schema();
  fail(ErrorCode::UnknownSchema, "no builtin schema named '" + std::string(name) + "'");
}

// Schema file: one directive per line, '#' comments.
//   rule<TAB>Arg1Type<TAB>Arg2Type<TAB>Cat[,Cat...]
//   name<TAB>schema-name
//   priority<TAB>Cat[,Cat...]
//   alias<TAB>Cat<TAB>Label
//   tiebreak<TAB>offset
inline RelationSchema load_schema(std::string_view definition_text) {
  RelationSchema schema("custom");
  std::string name = "custom";
  std::vector<std::string> priority;
  std::map<std::string, std::string> aliases;
  bool tiebreak = false;
  struct Rule { std::string a, b; std::vector<std::string> cats; };
  std::vector<Rule> rules;
  std::size_t line_no = 0;
  auto bad = [&](const std::string& why) {
    fail(ErrorCode::MalformedSchema, "line " + std::to_string(line_no) + ": " + why);
  };
  auto category_list = [&](std::string_view field) {
    std::vector<std::string> out;
    for (auto c : text::split(field, ',')) {
      c = text::trim(c);
      if (c.empty()) bad("empty category");
      out.emplace_back(c);
    }
    return out;
  };
  for (std::string_view line : text::lines(definition_text)) {
    ++line_no;
    if (text::trim(line).empty() || line.front() == '#') continue;
    auto cols = text::split(line, '\t');
    for (auto& c : cols) c = text::trim(c);
    if (cols[0] == "rule") {
      if (cols.size() != 4 || cols[1].empty() || cols[2].empty()) bad("rule needs Arg1Type, Arg2Type, categories");
      rules.push_back({std::string(cols[1]), std::string(cols[2]), category_list(cols[3])});
    } else if (cols[0] == "name" && cols.size() == 2 && !cols[1].empty()) {
      name = std::string(cols[1]);
    } else if (cols[0] == "priority" && cols.size() == 2) {
      priority = category_list(cols[1]);
    } else if (cols[0] == "alias" && cols.size() == 3 && !cols[1].empty() && !cols[2].empty()) {
      aliases[std::string(cols[1])] = std::string(cols[2]);
    } else if (cols[0] == "tiebreak" && cols.size() == 2 && cols[1] == "offset") {
      tiebreak = true;
    } else {
      bad("unrecognized directive");
    }
  }
  if (rules.empty()) fail(ErrorCode::MalformedSchema, "schema defines no rules");
  RelationSchema raw(name);
  for (auto& r : rules) {
    try {
      raw.add_rule(r.a, r.b, std::move(r.cats));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DuplicateRule) throw;
      fail(ErrorCode::MalformedSchema, e.what());
    }
  }
  raw.set_priority(priority);
  raw.set_self_tiebreak(tiebreak);
  return aliases.empty() ? raw : raw.with_aliases(aliases);
}

inline std::string to_text(const RelationSchema& schema) {
  std::string out = "name\t" + schema.name() + "\n";
  for (const auto& [pair, cats] : schema.rules()) {
    out += "rule\t" + pair.first + "\t" + pair.second + "\t" + text::join(cats, ",") + "\n";
  }
  if (!schema.priority().empty()) out += "priority\t" + text::join(schema.priority(), ",") + "\n";
  if (schema.self_tiebreak()) out += "tiebreak\toffset\n";
  return out;
}

}  // namespace relex

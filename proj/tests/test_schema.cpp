#include <gtest/gtest.h>

#include "relex/schema.hpp"
#include "support/synthetic.hpp"

using namespace relex;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IOFailure;
}

std::set<std::string> categories_of(const std::vector<CategoryMatch>& m) {
  std::set<std::string> out;
  for (const auto& x : m) out.insert(x.category);
  return out;
}

}  // namespace

TEST(Builtin, CategoryCounts) {
  EXPECT_EQ(builtin_schema("n2c2").categories().size(), 8u);
  EXPECT_EQ(builtin_schema("made1.0").categories().size(), 7u);
  EXPECT_EQ(code_of([] { builtin_schema("i2b2-2010"); }), ErrorCode::UnknownSchema);
}

TEST(Builtin, BothUnambiguous) {
  EXPECT_TRUE(n2c2_schema().unambiguous());
  EXPECT_TRUE(made_schema().unambiguous());
}

TEST(Builtin, RulesMatchHandTables) {
  std::vector<std::pair<RelationSchema, std::vector<synth::TypeRule>>> cases{{n2c2_schema(), synth::n2c2_rules()},
                                                                          {made_schema(), synth::made_rules()}};
  for (const auto& [schema, table] : cases) {
    EXPECT_EQ(schema.rules().size(), table.size());
    for (const auto& r : table) {
      auto it = schema.rules().find({r.arg1_type, r.arg2_type});
      ASSERT_NE(it, schema.rules().end()) << r.arg1_type << "," << r.arg2_type;
      EXPECT_EQ(it->second, std::vector<std::string>{r.category});
    }
  }
}

TEST(Compatible, AdeDrug) {
  auto m = compatible_categories(n2c2_schema(), "ADE", "Drug");
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].category, "ADE-Drug");
  EXPECT_EQ(m[0].arg1_type, "ADE");
  EXPECT_EQ(m[0].arg2_type, "Drug");
}

TEST(Compatible, AdeDosageEmpty) { EXPECT_TRUE(compatible_categories(n2c2_schema(), "ADE", "Dosage").empty()); }

TEST(Compatible, SymmetricOverAllTypePairs) {
  for (const auto& schema : std::vector<RelationSchema>{n2c2_schema(), made_schema()}) {
    auto types = schema.name() == "n2c2" ? synth::n2c2_types() : synth::made_types();
    for (const auto& a : types) {
      for (const auto& b : types) {
        auto ab = compatible_categories(schema, a, b);
        auto ba = compatible_categories(schema, b, a);
        EXPECT_EQ(categories_of(ab), categories_of(ba)) << a << " " << b;
        // role assignment is the same whichever way round the query is made
        for (std::size_t i = 0; i < ab.size(); ++i) {
          EXPECT_EQ(ab[i].arg1_type, ba[i].arg1_type);
        }
      }
    }
  }
}

TEST(Load, OneRule) {
  auto s = load_schema("name\tmini\nrule\tDrug\tDose\tDosage\n");
  EXPECT_EQ(s.name(), "mini");
  EXPECT_EQ(s.categories().size(), 1u);
}

TEST(Load, TwoCategoriesIsAmbiguous) {
  auto s = load_schema("rule\tA\tB\tR1,R2\n");
  EXPECT_FALSE(s.unambiguous());
  EXPECT_EQ(s.categories().size(), 2u);
}

TEST(Load, Errors) {
  EXPECT_EQ(code_of([] { load_schema("rule\tA\tB\tR1\nrule\tA\tB\tR2\n"); }), ErrorCode::DuplicateRule);
  EXPECT_EQ(code_of([] { load_schema("rule\tA\tB\tR1\nrule\tB\tA\tR2\n"); }), ErrorCode::DuplicateRule);
  EXPECT_EQ(code_of([] { load_schema("# nothing\n"); }), ErrorCode::MalformedSchema);
  EXPECT_EQ(code_of([] { load_schema("rule\tA\tB\n"); }), ErrorCode::MalformedSchema);
  EXPECT_EQ(code_of([] { load_schema("rule\tA\tB\tR1\npriority\tR9\n"); }), ErrorCode::MalformedSchema);
  EXPECT_EQ(code_of([] { load_schema("bogus\tline\n"); }), ErrorCode::MalformedSchema);
}

TEST(Load, TextRoundTrip) {
  for (const auto& s : std::vector<RelationSchema>{n2c2_schema(), made_schema(), load_schema("rule\tA\tB\tR1,R2\npriority\tR2\ntiebreak\toffset\n")}) {
    auto again = load_schema(to_text(s));
    EXPECT_EQ(again.name(), s.name());
    EXPECT_EQ(again.rules(), s.rules());
    EXPECT_EQ(again.priority(), s.priority());
    EXPECT_EQ(again.self_tiebreak(), s.self_tiebreak());
  }
}

TEST(Load, AliasesRenameCategories) {
  auto s = load_schema("rule\tDrug\tDose\tDosage\nalias\tDosage\tdo\n");
  EXPECT_EQ(s.categories(), std::set<std::string>{"do"});
}

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "relex/pipeline.hpp"
#include "support/synthetic.hpp"

using namespace relex;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("relex_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const std::string& env = "") {
  std::string cmd = env + (env.empty() ? "" : " ") + std::string(RELEX_CLI) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string capture(const std::string& args) {
  auto out = fs::temp_directory_path() / "relex_pipeline_capture.txt";
  [[maybe_unused]] int rc = std::system((std::string(RELEX_CLI) + " " + args + " >" + out.string() + " 2>&1").c_str());
  return read_file(out);
}

fs::path write_corpus(const fs::path& dir, const std::vector<Document>& docs) {
  fs::create_directories(dir);
  for (const auto& d : docs) write_document(dir, d);
  return dir;
}

// Small, fast model: one layer, H=16, short inputs.
const std::string kFast =
    "--set encoder=reference:layers=1,heads=2,hidden=16 --set max_len=64 --set learning_rate=0.001 --set epochs=3 "
    "--set batch_size=8";

}  // namespace

TEST(Cli, CandidateStatisticsMatchDump) {
  auto root = scratch("cand");
  auto corpus = write_corpus(root / "corpus", synth::documents_of(synth::random_corpus(20, 4)));
  ASSERT_EQ(run("candidates --corpus " + corpus.string() + " --out " + (root / "out").string()), 0);
  auto dump = read_file(root / "out" / "candidates.jsonl");
  auto stats = read_file(root / "out" / "statistics.txt");
  std::size_t lines = text::lines(dump).size();
  std::size_t summed = 0;
  for (auto line : text::lines(stats)) {
    auto f = text::split(line, '\t');
    if (f.size() == 3 && text::parse_int<std::size_t>(f[0])) {
      summed += text::parse_int<std::size_t>(f[1]).value_or(0) + text::parse_int<std::size_t>(f[2]).value_or(0);
    }
  }
  EXPECT_EQ(summed, lines) << stats;
  EXPECT_TRUE(fs::exists(root / "out" / "provenance.txt"));
}

TEST(Cli, ExitCodes) {
  auto root = scratch("codes");
  fs::create_directories(root / "empty");
  EXPECT_EQ(run("candidates --corpus " + (root / "empty").string() + " --out " + (root / "o").string()), 2);
  EXPECT_EQ(run("candidates --corpus " + (root / "nope").string() + " --out " + (root / "o").string()), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("candidates --corpus " + (root / "empty").string() + " --set bogus_key=1"), 1);
  EXPECT_EQ(run("schema n2c2"), 0);
  EXPECT_EQ(run("schema no-such-schema"), 1);

  auto corpus = write_corpus(root / "c", synth::documents_of(synth::random_corpus(6, 8)));
  EXPECT_EQ(run("train --train " + corpus.string() + " --bundle " + (root / "b").string() + " " + kFast +
                " --set batch_size=5"),
            1);
  EXPECT_EQ(run("train --train " + corpus.string() + " --bundle " + (root / "b").string() + " " + kFast +
                " --set batch_size=5 --set epochs=1 --allow-out-of-grid"),
            0);
  EXPECT_EQ(run("train --train " + corpus.string() + " --bundle " + (root / "b2").string() +
                " --set encoder=bert-base-uncased"),
            1);

  // surface text disagrees with the .txt span
  std::ofstream(corpus / "broken.ann") << "T1\tDrug 0 3\tabc\n";
  std::ofstream(corpus / "broken.txt") << "xyz def.";
  EXPECT_EQ(run("candidates --corpus " + corpus.string() + " --out " + (root / "o").string()), 2);
}

TEST(Cli, MissingGroupIsExit3) {
  auto root = scratch("missing_group");
  auto docs = synth::documents_of(synth::random_corpus(8, 21));
  auto corpus = write_corpus(root / "c", docs);
  ASSERT_EQ(run("train --train " + corpus.string() + " --bundle " + (root / "b").string() + " " + kFast +
                " --set regime=DISTANCE-SPECIFIC --set max_csd=1"),
            0);
  // hand-edit the manifest so the bundle claims a larger reach than its groups
  auto manifest = read_file(root / "b" / "manifest.txt");
  auto at = manifest.find("max_csd=1");
  ASSERT_NE(at, std::string::npos);
  manifest.replace(at, 9, "max_csd=3");
  write_file(root / "b" / "manifest.txt", manifest);
  EXPECT_EQ(run("predict --bundle " + (root / "b").string() + " --test " + corpus.string() + " --predictions " +
                (root / "p").string()),
            3);
}

TEST(Cli, TrainPredictEvaluateRoundTrip) {
  auto root = scratch("round");
  auto train = write_corpus(root / "train", synth::separable_corpus(12, 3));
  auto test = write_corpus(root / "test", synth::separable_corpus(4, 99));
  ASSERT_EQ(run("train --train " + train.string() + " --bundle " + (root / "bundle").string() + " " + kFast +
                " --set max_csd=0"),
            0);
  for (const char* f : {"manifest.txt", "vocab.txt", "training.tsv", "provenance.txt"}) {
    EXPECT_TRUE(fs::exists(root / "bundle" / f)) << f;
  }
  ASSERT_EQ(run("predict --bundle " + (root / "bundle").string() + " --test " + test.string() + " --predictions " +
                (root / "pred").string()),
            0);
  ASSERT_EQ(run("evaluate --gold " + test.string() + " --predictions " + (root / "pred").string()), 0);
  auto report = read_file(root / "pred" / "report.jsonl");
  auto j = nlohmann::json::parse(text::lines(report).back());
  EXPECT_EQ(j["category"], "OVERALL");
  auto by_csd = read_file(root / "pred" / "report_by_csd.tsv");
  EXPECT_EQ(by_csd.rfind("csd\t", 0), 0u);

  // schema mismatch with the bundle is a config error
  EXPECT_EQ(run("predict --schema made1.0 --bundle " + (root / "bundle").string() + " --test " + test.string() +
                " --predictions " + (root / "pred2").string()),
            1);
}

TEST(Cli, EvaluateGoldCopyAndMissingFiles) {
  auto root = scratch("eval");
  auto docs = synth::documents_of(synth::random_corpus(10, 31));
  auto gold = write_corpus(root / "gold", docs);
  fs::create_directories(root / "pred");
  std::vector<PredictedRelation> rels;
  for (const auto& d : docs)
    for (const auto& r : d.gold_relations) rels.push_back({d.doc_id, r.arg1, r.arg2, r.category, 1.0});
  write_predictions(rels, docs, root / "pred");
  ASSERT_EQ(run("evaluate --gold " + gold.string() + " --predictions " + (root / "pred").string()), 0);
  auto report = read_file(root / "pred" / "report.jsonl");
  auto j = nlohmann::json::parse(text::lines(report).back());
  EXPECT_EQ(j["f1"].get<double>(), 1.0);

  // a document with no prediction file contributes only false negatives
  std::size_t dropped = 0;
  for (const auto& d : docs) {
    if (!d.gold_relations.empty()) {
      dropped = d.gold_relations.size();
      fs::remove(root / "pred" / (d.doc_id + ".ann"));
      break;
    }
  }
  ASSERT_GT(dropped, 0u);
  ASSERT_EQ(run("evaluate --gold " + gold.string() + " --predictions " + (root / "pred").string()), 0);
  report = read_file(root / "pred" / "report.jsonl");
  j = nlohmann::json::parse(text::lines(report).back());
  EXPECT_EQ(j["fn"].get<std::size_t>(), dropped);
  EXPECT_EQ(j["fp"].get<std::size_t>(), 0u);

  // a relation naming an entity the gold does not have
  write_file(root / "pred" / (docs[0].doc_id + ".ann"), "R1\tStrength-Drug Arg1:T998 Arg2:T999\n");
  auto out = capture("evaluate --gold " + gold.string() + " --predictions " + (root / "pred").string());
  EXPECT_EQ(run("evaluate --gold " + gold.string() + " --predictions " + (root / "pred").string()), 2);
  EXPECT_NE(out.find(docs[0].doc_id), std::string::npos) << out;
}

TEST(Cli, ExperimentGridAndResume) {
  auto root = scratch("exp");
  auto train = write_corpus(root / "train", synth::separable_corpus(8, 5));
  auto test = write_corpus(root / "test", synth::separable_corpus(3, 6));
  const std::string base = "experiment --train " + train.string() + " --test " + test.string() + " " + kFast +
                           " --set epochs=3 --set max_csd=1";
  ASSERT_EQ(run(base + " --out " + (root / "a").string() +
                " --set grid.strategy=binary,multi-class --set grid.regime=UNIFIED,DISTANCE-SPECIFIC"),
            0);
  auto results = read_file(root / "a" / "results.tsv");
  auto rows = text::lines(results);
  ASSERT_EQ(rows.size(), 5u);  // header + 4 cells
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_NE(rows[i].find("\tok\t"), std::string::npos) << rows[i];

  ASSERT_EQ(run(base + " --out " + (root / "s").string() + " --set grid.scheme=1,2,3,4"), 0);
  auto schemes = read_file(root / "s" / "results.tsv");
  EXPECT_EQ(text::lines(schemes).size(), 5u);

  // resume: keep the first ledger row, tear the second, rerun
  auto ledger_text = read_file(root / "a" / "cells.ledger");
  auto ledger = text::lines(ledger_text);
  ASSERT_EQ(ledger.size(), 4u);
  std::string kept = std::string(ledger[0]) + "\n" + std::string(ledger[1].substr(0, 10));
  write_file(root / "a" / "cells.ledger", kept);
  auto log = capture(base + " --out " + (root / "a").string() +
                     " --set grid.strategy=binary,multi-class --set grid.regime=UNIFIED,DISTANCE-SPECIFIC");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n') >= 4, true);
  EXPECT_NE(log.find("(resumed)"), std::string::npos) << log;
  auto results_again = read_file(root / "a" / "results.tsv");
  auto again = text::lines(results_again);
  ASSERT_EQ(again.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(again[i], rows[i]);
}

TEST(Cli, RelexHomeResolvesBundle) {
  auto root = scratch("home");
  auto train = write_corpus(root / "train", synth::separable_corpus(4, 7));
  ASSERT_EQ(run("train --train " + train.string() + " --bundle rel/b " + kFast + " --set max_csd=0",
                "RELEX_HOME=" + (root / "home").string()),
            0);
  EXPECT_TRUE(fs::exists(root / "home" / "rel" / "b" / "manifest.txt"));
  EXPECT_EQ(run("predict --bundle rel/b --test " + train.string() + " --predictions " + (root / "p").string(),
                "RELEX_HOME=" + (root / "home").string()),
            0);
}

TEST(Cli, SchemaAndConvert) {
  auto text = capture("schema n2c2");
  EXPECT_NE(text.find("Strength"), std::string::npos);
  auto root = scratch("convert");
  std::ofstream(root / "in.jsonl")
      << R"({"doc_id":"x","text":"aspirin 81 mg daily.","entities":[{"id":"T1","type":"Drug","start":0,"end":7},)"
         R"({"id":"T2","type":"Strength","start":8,"end":13}],"relations":[{"id":"R1","category":"Strength-Drug","arg1":"T2","arg2":"T1"}]})"
      << "\n";
  ASSERT_EQ(run("convert " + (root / "in.jsonl").string() + " " + (root / "out").string()), 0);
  auto docs = load_corpus_dir(root / "out");
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0].gold_relations.size(), 1u);
  std::ofstream(root / "bad.jsonl") << "{not json\n";
  EXPECT_EQ(run("convert " + (root / "bad.jsonl").string() + " " + (root / "out2").string()), 2);
}

TEST(Cli, RetrainReproducesBundle) {
  auto root = scratch("repro");
  auto train = write_corpus(root / "train", synth::separable_corpus(6, 11));
  for (const char* b : {"b1", "b2"}) {
    ASSERT_EQ(run("train --train " + train.string() + " --bundle " + (root / b).string() + " " + kFast +
                  " --set max_csd=0 --set seed=13"),
              0);
  }
  EXPECT_EQ(read_file(root / "b1" / "manifest.txt"), read_file(root / "b2" / "manifest.txt"));
  EXPECT_EQ(read_file(root / "b1" / "training.tsv"), read_file(root / "b2" / "training.tsv"));
}

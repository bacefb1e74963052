// Acceptance run: one PASS/FAIL line per headline criterion, exit 1 on any FAIL.
// The licensed-corpus check runs only when RELEX_N2C2_DIR points at the
// training notes; otherwise it reports SKIP.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "relex/pipeline.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace relex;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  enum Kind { kPass, kFail, kSkip } kind;
  std::string detail;
};

Outcome fail_with(std::string d) { return {Outcome::kFail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return {ok ? Outcome::kPass : Outcome::kFail, std::move(d)}; }

std::shared_ptr<const BasicTokenizer> tokenizer_for(const std::vector<Document>& docs) {
  std::vector<std::string_view> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  return std::make_shared<BasicTokenizer>(build_tokenizer(texts));
}

// --- criteria ------------------------------------------------------------------------

Outcome candidate_oracle() {
  auto corpus = synth::random_corpus(200, 2024);
  auto t0 = Clock::now();
  std::size_t mismatched = 0, total = 0;
  for (const auto& d : corpus) {
    auto got = generate_candidates(d.doc, n2c2_schema(), 9);
    std::set<synth::CandidateTriple> mine;
    for (const auto& p : got.pairs) mine.emplace(p.arg1, p.arg2, p.csd);
    auto oracle = synth::oracle_candidates(d, synth::n2c2_rules(), 9);
    mismatched += mine != oracle || mine.size() != got.size();
    total += got.size();
  }
  double secs = seconds_since(t0);
  return verdict(mismatched == 0 && secs < 10.0, "200 docs, " + std::to_string(total) + " pairs, " +
                                                     std::to_string(mismatched) + " mismatched docs, " +
                                                     text::fixed(secs, 2) + " s");
}

Outcome csd_partition() {
  auto docs = synth::documents_of(synth::random_corpus(200, 2024));
  std::size_t violations = 0;
  std::vector<std::set<std::tuple<std::string, std::string, std::string>>> by_k;
  for (std::size_t k = 0; k <= 9; ++k) {
    auto set = generate_candidates(docs, n2c2_schema(), k);
    std::size_t parts = 0;
    for (const auto& [csd, part] : stratify_by_csd(set)) {
      parts += part.size();
      for (const auto& p : part.pairs) violations += p.csd != csd || csd > k;
    }
    violations += parts != set.size();
    std::set<std::tuple<std::string, std::string, std::string>> keys;
    for (const auto& p : set.pairs) keys.emplace(p.doc_id, p.arg1, p.arg2);
    if (!by_k.empty()) violations += !std::includes(keys.begin(), keys.end(), by_k.back().begin(), by_k.back().end());
    by_k.push_back(std::move(keys));
  }
  return verdict(violations == 0, "max_csd 0..9, " + std::to_string(violations) + " violations");
}

Outcome encoding_invariants() {
  auto corpus = synth::documents_of(synth::random_corpus(200, 77));
  auto tok = tokenizer_for(corpus);
  auto pairs = generate_candidates(corpus, n2c2_schema(), 9);
  if (pairs.size() < 1000) return fail_with("only " + std::to_string(pairs.size()) + " pairs");
  auto index = index_documents(corpus);
  const auto& sp = tok->specials();
  std::mt19937_64 rng(13);
  std::size_t violations = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto& p = pairs.pairs[rng() % pairs.size()];
    const auto& d = lookup_document(index, p.doc_id);
    auto inst = build_instance(p, d, *tok, 512);
    for (int id : {sp.cls, sp.s1, sp.e1, sp.s2, sp.e2})
      violations += std::count(inst.token_ids.begin(), inst.token_ids.end(), id) != 1;
    const auto& pos = inst.positions;
    violations += !(pos.s1 < pos.e1 && pos.s2 < pos.e2);
    violations += inst.token_ids[pos.cls] != sp.cls || inst.token_ids[pos.s1] != sp.s1 ||
                  inst.token_ids[pos.e1] != sp.e1 || inst.token_ids[pos.s2] != sp.s2 || inst.token_ids[pos.e2] != sp.e2;
    auto sep = std::find(inst.token_ids.begin(), inst.token_ids.end(), sp.sep);
    std::vector<int> first(inst.token_ids.begin() + 1, sep), second(sep + 1, inst.token_ids.end() - 1);
    auto strip = [&](std::vector<int> v) {
      std::erase_if(v, [&](int id) { return id == sp.s1 || id == sp.e1 || id == sp.s2 || id == sp.e2; });
      return v;
    };
    auto sentence = [&](const Entity& e) {
      const auto& s = d.sentences[sentence_index_of(d, e)];
      return tok->encode(d.text.substr(s.start, s.end - s.start));
    };
    violations += strip(first) != sentence(d.entity(p.arg1));
    violations += strip(second) != sentence(d.entity(p.arg2));
  }
  return verdict(violations == 0, "1000 pairs, " + std::to_string(violations) + " violations");
}

Outcome dimension_law() {
  const std::size_t width[] = {0, 1, 3, 5, 2};
  std::size_t bad = 0;
  for (std::size_t h : {8u, 32u, 64u}) {
    Matrix out = Matrix::Random(12, static_cast<Eigen::Index>(h));
    for (int s = 1; s <= 4; ++s) {
      auto rep = extract_representation(out, Positions{0, 2, 4, 7, 9}, static_cast<Scheme>(s));
      bad += static_cast<std::size_t>(rep.size()) != width[s] * h;
      bad += scheme_dimension(static_cast<Scheme>(s), h) != width[s] * h;
    }
  }
  Matrix crafted(8, 4);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 4; ++c) crafted(r, c) = 10.0 * r + c;
  RowVector expected(20);
  const int rows[] = {0, 1, 3, 5, 6};  // cls, S1, E1, S2, E2
  for (int k = 0; k < 5; ++k)
    for (int c = 0; c < 4; ++c) expected(4 * k + c) = 10.0 * rows[k] + c;
  bool order_ok = extract_representation(crafted, Positions{0, 1, 3, 5, 6}, Scheme::kClsMarkers) == expected;
  return verdict(bad == 0 && order_ok, "H in {8,32,64}: " + std::to_string(bad) + " wrong sizes; scheme 3 order " +
                                           (order_ok ? "matches" : "differs"));
}

Outcome gradient_check() {
  auto docs = synth::separable_corpus(3, 1, 2);
  auto tok = tokenizer_for(docs);
  auto labeled = label_candidates(generate_candidates(docs, n2c2_schema(), 1), docs).candidates;
  auto index = index_documents(docs);
  auto enc = reference_encoder(2, 2, 8, 13, tok->vocab_size(), 64);
  RelationHead head(Scheme::kClsMarkers, 8, class_list(Strategy::kMultiClass, n2c2_schema()), 13);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> wide(0.0, 0.5);
  for (auto* p : enc->parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += wide(rng);
  for (auto* p : head.parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += wide(rng);

  std::vector<TrainingExample> data;
  auto classes = head.classes();
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& p = labeled.pairs[k];
    auto label = training_label(p, Strategy::kMultiClass);
    data.push_back({build_instance(p, *index.at(p.doc_id), *tok, 64),
                    static_cast<std::size_t>(std::find(classes.begin(), classes.end(), label) - classes.begin())});
  }
  std::vector<const TrainingExample*> batch;
  for (const auto& d : data) batch.push_back(&d);
  std::vector<double> w(classes.size(), 1.0);
  auto loss = [&] {
    double l = 0.0;
    for (const auto* ex : batch) {
      RowVector probs =
          head.probabilities(extract_representation(enc->encode(ex->instance), ex->instance.positions, head.scheme()));
      l -= std::log(probs(static_cast<Eigen::Index>(ex->label)));
    }
    return l / static_cast<double>(batch.size());
  };
  enc->zero_grad();
  for (auto* p : head.parameters()) p->zero_grad();
  accumulate_batch_gradients(batch, *enc, head, w);

  std::vector<nn::Parameter*> params = enc->parameters();
  for (auto* p : head.parameters()) params.push_back(p);
  std::size_t checked = 0;
  double worst = 0.0;
  for (auto* p : params) {
    std::vector<Eigen::Index> live;
    for (Eigen::Index i = 0; i < p->grad.size(); ++i)
      if (std::abs(p->grad.data()[i]) > 1e-6) live.push_back(i);
    for (int draw = 0; draw < 2 && !live.empty(); ++draw) {
      Eigen::Index i = live[rng() % live.size()];
      double& x = p->value.data()[i];
      const double saved = x, eps = 1e-5;
      x = saved + eps;
      double up = loss();
      x = saved - eps;
      double down = loss();
      x = saved;
      double numeric = (up - down) / (2 * eps), analytic = p->grad.data()[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(std::abs(numeric), std::abs(analytic)));
      ++checked;
    }
  }
  std::ostringstream d;
  d << checked << " parameters, 4-instance batch, worst relative error " << worst;
  return verdict(checked >= 20 && worst < 1e-3, d.str());
}

// 300 pairs from the separable corpus, 2 layers, H=64, lr 1e-3, seed 13, batch 8.
// 20 epochs, outside the 3..6 grid.
Outcome overfit() {
  auto docs = synth::separable_corpus(40, 13, 3);
  auto tok = tokenizer_for(docs);
  auto labeled = label_candidates(generate_candidates(docs, n2c2_schema(), 2), docs).candidates;
  if (labeled.size() < 300) return fail_with("corpus too small: " + std::to_string(labeled.size()));
  labeled.pairs.resize(300);
  labeled.retally();
  auto index = index_documents(docs);
  EncoderFactory factory = [v = tok->vocab_size()] { return reference_encoder(2, 2, 64, 13, v, 128); };

  std::vector<Document> gold;
  // gold restricted to the 300 kept pairs
  std::map<std::string, Document> trimmed;
  for (const auto& d : docs) {
    Document t = d;
    t.gold_relations.clear();
    trimmed.emplace(d.doc_id, std::move(t));
  }
  for (const auto& p : labeled.pairs)
    if (p.positive()) {
      auto& t = trimmed.at(p.doc_id);
      t.gold_relations.push_back({"R" + std::to_string(t.gold_relations.size() + 1), p.label, p.arg1, p.arg2});
    }
  for (auto& [id, d] : trimmed) gold.push_back(std::move(d));

  auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  for (auto strategy : {Strategy::kBinary, Strategy::kMultiClass}) {
    for (auto regime : {Regime::kUnified, Regime::kDistanceSpecific}) {
      TrainConfig cfg;
      cfg.strategy = strategy;
      cfg.regime = regime;
      cfg.learning_rate = 1e-3;
      cfg.seed = 13;
      cfg.batch_size = 8;
      cfg.epochs = 20;
      cfg.max_csd = 2;
      cfg.allow_out_of_grid = true;
      cfg.max_len = 128;
      auto bundle = train(labeled, index, factory, tok, n2c2_schema(), cfg);
      auto pred = predict(labeled.pairs, index, bundle, n2c2_schema());
      double f1 = score(gold, pred).micro.f1;
      ok = ok && f1 >= 0.95;
      detail += (detail.empty() ? "" : ", ") + to_string(strategy) + "/" + to_string(regime) + " F1=" + text::fixed(f1, 4);
    }
  }
  double secs = seconds_since(t0);
  return verdict(ok && secs < 300.0, "20 epochs: " + detail + "; " + text::fixed(secs, 1) + " s");
}

Outcome rule_composition() {
  std::size_t checked = 0, wrong = 0;
  for (int i = 0; i < 2; ++i) {
    synth::GeneratorOptions o;
    if (i) o.types = synth::made_types(), o.rules = synth::made_rules();
    auto schema = i ? made_schema() : n2c2_schema();
    auto docs = synth::documents_of(synth::random_corpus(200, 500 + i, o));
    for (const auto& p : label_candidates(generate_candidates(docs, schema, 9), docs).candidates.pairs) {
      if (!p.positive()) continue;
      ++checked;
      wrong += infer_category(p.arg1_type, p.arg2_type, schema) != p.label;
    }
  }
  bool ambiguous_raised = false;
  try {
    infer_category("A", "B", load_schema("rule\tA\tB\tR1,R2\n"));
  } catch (const Error& e) {
    ambiguous_raised = e.code() == ErrorCode::AmbiguousCategory;
  }
  return verdict(wrong == 0 && checked > 0 && ambiguous_raised,
                 std::to_string(checked - wrong) + "/" + std::to_string(checked) +
                     " gold categories reproduced; ambiguous schema " + (ambiguous_raised ? "raises" : "does not raise"));
}

Outcome scorer() {
  auto doc = parse_standoff(
      "T1\tDrug 0 1\ta\nT2\tStrength 2 3\tb\nT3\tDrug 4 5\tc\nT4\tStrength 6 7\td\nT5\tDrug 8 9\te\nT6\tStrength 10 11\tf\n"
      "R1\tStrength-Drug Arg1:T2 Arg2:T1\nR2\tStrength-Drug Arg1:T4 Arg2:T3\nR3\tStrength-Drug Arg1:T6 Arg2:T5\n",
      "a b c d e f.", "d");
  std::vector<Document> gold{doc};
  std::vector<PredictedRelation> pred{{"d", "T2", "T1", "Strength-Drug", 1},
                                      {"d", "T4", "T3", "Strength-Drug", 1},
                                      {"d", "T2", "T3", "Strength-Drug", 1},
                                      {"d", "T6", "T1", "Strength-Drug", 1}};
  auto m = score(gold, pred).micro;
  bool fixture = std::abs(m.precision - 0.5) < 1e-4 && std::abs(m.recall - 0.6667) < 1e-4 &&
                 std::abs(m.f1 - 0.5714) < 1e-4;

  std::mt19937_64 rng(5);
  const std::vector<std::string> cats{"A", "B", "C"};
  std::size_t violations = 0;
  auto key_strings = [](const std::vector<RelationKey>& v) {
    std::vector<std::string> out;
    for (const auto& k : v) out.push_back(synth::oracle_key(k.doc_id, k.first, k.second, k.category));
    return out;
  };
  for (int trial = 0; trial < 500; ++trial) {
    auto draw = [&] {
      std::vector<RelationKey> v;
      std::size_t n = rng() % 12;
      for (std::size_t i = 0; i < n; ++i)
        v.emplace_back("d" + std::to_string(rng() % 2), "T" + std::to_string(rng() % 4),
                       "T" + std::to_string(4 + rng() % 3), cats[rng() % 3]);
      return v;
    };
    auto g = draw(), p = draw();
    auto a = score_keys(g, p), b = score_keys(p, g);
    auto oracle = synth::oracle_score(key_strings(g), key_strings(p));
    violations += a.micro.tp != oracle.tp || a.micro.fp != oracle.fp || a.micro.fn != oracle.fn;
    violations += std::abs(a.micro.precision - b.micro.recall) > 1e-12 ||
                  std::abs(a.micro.recall - b.micro.precision) > 1e-12 || std::abs(a.micro.f1 - b.micro.f1) > 1e-12;
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [c, x] : a.per_category) tp += x.tp, fp += x.fp, fn += x.fn;
    violations += tp != a.micro.tp || fp != a.micro.fp || fn != a.micro.fn;
  }

  synth::GeneratorOptions o;
  o.max_sentences = 4;
  o.relation_rate = 0.5;
  auto docs = synth::documents_of(synth::random_corpus(60, 23, o));
  std::vector<PredictedRelation> guesses;
  for (const auto& d : docs) {
    for (const auto& r : d.gold_relations)
      if (rng() % 3) guesses.push_back({d.doc_id, r.arg1, r.arg2, r.category, 1});
    for (const auto& p : generate_candidates(d, n2c2_schema(), 9).pairs)
      if (rng() % 5 == 0) guesses.push_back({p.doc_id, p.arg1, p.arg2, infer_category(p.arg1_type, p.arg2_type, n2c2_schema()), 1});
  }
  auto global = score(docs, guesses).micro;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& [csd, r] : per_csd_breakdown(docs, guesses)) tp += r.micro.tp, fp += r.micro.fp, fn += r.micro.fn;
  bool buckets = tp == global.tp && fp == global.fp && fn == global.fn;

  return verdict(fixture && violations == 0 && buckets,
                 "fixture P=" + text::fixed(m.precision, 4) + " R=" + text::fixed(m.recall, 4) +
                     " F1=" + text::fixed(m.f1, 4) + "; 500 random sets, " + std::to_string(violations) +
                     " violations; per-CSD sums " + (buckets ? "match" : "differ"));
}

// Full pipeline twice in fresh directories; prediction files compared byte for byte.
Outcome determinism() {
  auto root = fs::temp_directory_path() / "relex_acceptance_determinism";
  fs::remove_all(root);
  auto write_corpus = [&](const fs::path& dir, const std::vector<Document>& docs) {
    fs::create_directories(dir);
    for (const auto& d : docs) write_document(dir, d);
  };
  write_corpus(root / "train", synth::separable_corpus(12, 3));
  write_corpus(root / "test", synth::separable_corpus(5, 4));
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* tag : {"run1", "run2"}) {
    ExperimentConfig c;
    for (const auto& kv : std::vector<std::pair<std::string, std::string>>{
             {"encoder", "reference:layers=2,heads=2,hidden=32"},
             {"seed", "13"},
             {"learning_rate", "0.001"},
             {"max_len", "64"},
             {"epochs", "3"},
             {"batch_size", "8"},
             {"corpus_dir", (root / "train").string()},
             {"train_dir", (root / "train").string()},
             {"test_dir", (root / "test").string()},
             {"gold_dir", (root / "test").string()},
             {"bundle_dir", (root / tag / "bundle").string()},
             {"predictions_dir", (root / tag / "pred").string()},
             {"out_dir", (root / tag / "cand").string()}}) {
      apply_setting(c, kv.first, kv.second);
    }
    cmd_candidates(c);
    cmd_train(c);
    cmd_predict(c);
    apply_setting(c, "out_dir", (root / tag / "eval").string());
    cmd_evaluate(c);
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(root / tag / "pred"))
      if (e.path().extension() == ".ann") files[e.path().filename().string()] = read_file(e.path());
    runs.push_back(std::move(files));
  }
  std::size_t relations = 0;
  for (const auto& [name, body] : runs[0]) relations += text::lines(body).size();
  return verdict(!runs[0].empty() && runs[0] == runs[1],
                 std::to_string(runs[0].size()) + " prediction files, " + std::to_string(relations) +
                     " relations, runs " + (runs[0] == runs[1] ? "identical" : "differ"));
}

Outcome licensed_corpus() {
  const char* dir = std::getenv("RELEX_N2C2_DIR");
  if (!dir || !*dir) return {Outcome::kSkip, "RELEX_N2C2_DIR not set; licensed notes not mounted"};
  ParseOptions opts;
  opts.ignore_other_records = true;
  auto docs = load_corpus_dir(dir, opts);
  std::size_t relations = 0;
  for (const auto& d : docs) relations += d.gold_relations.size();
  auto labeled = label_candidates(generate_candidates(docs, n2c2_schema(), 4), docs);
  auto strata = stratify_by_csd(labeled.candidates);
  std::size_t pos = 0, neg = 0;
  if (auto it = strata.find(2); it != strata.end())
    for (const auto& [label, n] : it->second.counts) (label == kNegative ? neg : pos) += n;
  return verdict(docs.size() == 303 && relations == 35606,
                 std::to_string(docs.size()) + " notes, " + std::to_string(relations) +
                     " relations; CSD=2 stratum " + std::to_string(neg) + " negative / " + std::to_string(pos) +
                     " positive");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"candidate-oracle", candidate_oracle},   {"csd-partition", csd_partition},
      {"encoding-invariants", encoding_invariants}, {"dimension-law", dimension_law},
      {"gradient-check", gradient_check},       {"overfit", overfit},
      {"rule-composition", rule_composition},   {"scorer-oracle", scorer},
      {"determinism", determinism},             {"licensed-corpus", licensed_corpus}};
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = fail_with(std::string("exception: ") + e.what());
    }
    const char* tag = o.kind == Outcome::kPass ? "PASS" : o.kind == Outcome::kFail ? "FAIL" : "SKIP";
    failures += o.kind == Outcome::kFail;
    std::cout << tag << "  " << name << "  " << o.detail << std::endl;
  }
  return failures ? 1 : 0;
}

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "relex/candidates.hpp"
#include "relex/corpus.hpp"
#include "relex/cross_validation.hpp"
#include "relex/encoder.hpp"
#include "relex/error.hpp"
#include "relex/evaluation.hpp"
#include "relex/inference.hpp"
#include "relex/model.hpp"
#include "relex/schema.hpp"
#include "relex/tokenizer.hpp"

namespace relex {

inline constexpr std::string_view kVersion = "relex 0.1.0";
inline constexpr const char* kHomeEnv = "RELEX_HOME";

// Flat `key = value` experiment description. Train keys are shared with
// TrainConfig; the rest describe inputs, outputs and grids.
struct ExperimentConfig {
  std::string schema = "n2c2";
  std::string encoder = "reference:layers=2,heads=2,hidden=64";
  std::filesystem::path corpus_dir;       // candidates
  std::filesystem::path train_dir;        // train / experiment
  std::filesystem::path test_dir;         // predict / experiment
  std::filesystem::path gold_dir;         // evaluate
  std::filesystem::path predictions_dir;  // predict output, evaluate input
  std::filesystem::path bundle_dir;       // train output, predict input
  std::filesystem::path out_dir;          // reports, dumps, provenance
  bool newline_boundary = true;
  std::size_t vocab_min_count = 1;
  std::size_t negative_cap = 0;  // 0: no down-sampling
  std::optional<double> threshold;
  bool cross_validate = false;
  std::vector<std::size_t> cv_epochs{3, 4, 5, 6};
  std::vector<std::size_t> cv_batch_sizes{4, 8, 16};
  std::vector<std::string> grid_strategy, grid_scheme, grid_regime, grid_max_csd;
  TrainConfig train;
  std::vector<std::pair<std::string, std::string>> raw;  // every key as given, in order
};

namespace detail {

inline std::vector<std::size_t> size_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (auto part : text::split(v, ',')) {
    auto n = text::parse_int<std::size_t>(text::trim(part));
    if (!n) fail(ErrorCode::InvalidConfig, std::string(key) + " must be a comma-separated list of integers");
    out.push_back(*n);
  }
  return out;
}

inline std::vector<std::string> string_list(std::string_view v) {
  std::vector<std::string> out;
  for (auto part : text::split(v, ',')) {
    part = text::trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

}  // namespace detail

inline void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view value) {
  for (auto& kv : c.raw) {
    if (kv.first == key) {
      kv.second = std::string(value);
      goto applied;
    }
  }
  c.raw.emplace_back(std::string(key), std::string(value));
applied:
  if (apply_setting(c.train, key, value)) return;
  if (key == "schema") c.schema = std::string(value);
  else if (key == "encoder") c.encoder = std::string(value);
  else if (key == "corpus_dir") c.corpus_dir = std::string(value);
  else if (key == "train_dir") c.train_dir = std::string(value);
  else if (key == "test_dir") c.test_dir = std::string(value);
  else if (key == "gold_dir") c.gold_dir = std::string(value);
  else if (key == "predictions_dir") c.predictions_dir = std::string(value);
  else if (key == "bundle_dir") c.bundle_dir = std::string(value);
  else if (key == "out_dir") c.out_dir = std::string(value);
  else if (key == "newline_boundary") c.newline_boundary = parse_bool(key, value);
  else if (key == "vocab_min_count") c.vocab_min_count = detail::size_list(key, value).at(0);
  else if (key == "negative_cap") c.negative_cap = detail::size_list(key, value).at(0);
  else if (key == "threshold") {
    if (value.empty()) {
      c.threshold.reset();
    } else {
      auto v = text::parse_double(value);
      if (!v || *v < 0.0 || *v > 1.0) fail(ErrorCode::InvalidConfig, "threshold must be in [0, 1]");
      c.threshold = *v;
    }
  } else if (key == "cross_validate") c.cross_validate = parse_bool(key, value);
  else if (key == "cv_epochs") c.cv_epochs = detail::size_list(key, value);
  else if (key == "cv_batch_sizes") c.cv_batch_sizes = detail::size_list(key, value);
  else if (key == "grid.strategy") c.grid_strategy = detail::string_list(value);
  else if (key == "grid.scheme") c.grid_scheme = detail::string_list(value);
  else if (key == "grid.regime") c.grid_regime = detail::string_list(value);
  else if (key == "grid.max_csd") c.grid_max_csd = detail::string_list(value);
  else fail(ErrorCode::InvalidConfig, "unknown config key '" + std::string(key) + "'");
}

inline void apply_config_text(ExperimentConfig& c, std::string_view content) {
  std::size_t line_no = 0;
  for (auto line : text::lines(content)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorCode::InvalidConfig, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_setting(c, text::trim(line.substr(0, eq)), text::trim(line.substr(eq + 1)));
  }
}

// "key=value" override as passed on the command line.
inline void apply_override(ExperimentConfig& c, std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos) fail(ErrorCode::InvalidConfig, "override must be key=value: " + std::string(assignment));
  apply_setting(c, text::trim(assignment.substr(0, eq)), text::trim(assignment.substr(eq + 1)));
}

inline std::string config_snapshot(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [k, v] : c.raw) out += k + " = " + v + "\n";
  return out;
}

// Relative bundle paths live under $RELEX_HOME when it is set.
inline std::filesystem::path resolve_bundle_dir(const std::filesystem::path& p) {
  if (p.empty()) fail(ErrorCode::InvalidConfig, "bundle_dir is not set");
  if (p.is_absolute()) return p;
  if (const char* home = std::getenv(kHomeEnv); home && *home) return std::filesystem::path(home) / p;
  return p;
}

inline const std::filesystem::path& require_dir(const std::filesystem::path& p, std::string_view key) {
  if (p.empty()) fail(ErrorCode::InvalidConfig, std::string(key) + " is not set");
  if (!std::filesystem::is_directory(p)) fail(ErrorCode::InvalidConfig, std::string(key) + " '" + p.string() + "' is not a directory");
  return p;
}

inline const std::filesystem::path& require_set(const std::filesystem::path& p, std::string_view key) {
  if (p.empty()) fail(ErrorCode::InvalidConfig, std::string(key) + " is not set");
  return p;
}

// Builtin name or path to a schema file.
inline RelationSchema resolve_schema(const std::string& spec) {
  if (spec == "n2c2" || spec == "made1.0") return builtin_schema(spec);
  if (std::filesystem::is_regular_file(spec)) return load_schema(read_file(spec));
  return builtin_schema(spec);  // raises UnknownSchema
}

inline std::vector<Document> load_corpus(const std::filesystem::path& dir, const ExperimentConfig& c) {
  ParseOptions opts;
  opts.segmenter.newline_is_boundary = c.newline_boundary;
  auto docs = load_corpus_dir(dir, opts);
  if (docs.empty()) fail(ErrorCode::IOFailure, "no .ann files in " + dir.string());
  return docs;
}

inline void write_provenance(const std::filesystem::path& dir, std::string_view command, const ExperimentConfig& c) {
  std::string out = "version=" + std::string(kVersion) + "\ncommand=" + std::string(command) +
                    "\nseed=" + std::to_string(c.train.seed) + "\n# config\n" + config_snapshot(c);
  write_file(dir / "provenance.txt", out);
}

// Exit codes: 1 usage/config, 2 data, 3 training/inference.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownSchema:
    case ErrorCode::MalformedSchema:
    case ErrorCode::DuplicateRule:
    case ErrorCode::UnsupportedEncoder:
    case ErrorCode::InvalidShape:
      return 1;
    case ErrorCode::MalformedLine:
    case ErrorCode::DanglingReference:
    case ErrorCode::OffsetOutOfRange:
    case ErrorCode::UnassignedEntity:
    case ErrorCode::AmbiguousRole:
    case ErrorCode::ConflictingGold:
    case ErrorCode::IOFailure:
    case ErrorCode::EntitySpaceMismatch:
      return 2;
    default:
      return 3;
  }
}

// --- candidates ------------------------------------------------------------------

struct CsdStats {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct CorpusStats {
  std::size_t notes = 0;
  std::size_t relations = 0;  // gold relations in the corpus
  std::size_t candidates = 0;
  std::size_t skipped_gold = 0;
  std::map<std::size_t, CsdStats> per_csd;
};

inline CorpusStats corpus_stats(std::span<const Document> docs, const LabelResult& labeled) {
  CorpusStats s;
  s.notes = docs.size();
  for (const auto& d : docs) s.relations += d.gold_relations.size();
  s.candidates = labeled.candidates.size();
  s.skipped_gold = labeled.skipped.size();
  for (const auto& p : labeled.candidates.pairs) {
    auto& c = s.per_csd[p.csd];
    (p.positive() ? c.positives : c.negatives) += 1;
  }
  return s;
}

inline std::string format_stats(const CorpusStats& s) {
  std::string out = "notes\t" + std::to_string(s.notes) + "\n";
  out += "relations\t" + std::to_string(s.relations) + "\n";
  out += "csd\tpositive\tnegative\n";
  for (const auto& [csd, c] : s.per_csd) {
    out += std::to_string(csd) + "\t" + std::to_string(c.positives) + "\t" + std::to_string(c.negatives) + "\n";
  }
  out += "candidates\t" + std::to_string(s.candidates) + "\n";
  out += "skipped_gold\t" + std::to_string(s.skipped_gold) + "\n";
  return out;
}

inline LabelResult labeled_candidates(std::span<const Document> docs, const RelationSchema& schema,
                                      const ExperimentConfig& c, std::size_t max_csd) {
  auto result = label_candidates(generate_candidates(docs, schema, max_csd), docs, schema);
  if (c.negative_cap) result.candidates = cap_negatives(result.candidates, c.negative_cap, c.train.seed);
  return result;
}

// Writes candidates.jsonl, statistics.txt and provenance.txt into out_dir.
inline CorpusStats cmd_candidates(const ExperimentConfig& c) {
  auto dir = c.corpus_dir.empty() ? c.train_dir : c.corpus_dir;
  auto docs = load_corpus(require_dir(dir, "corpus_dir"), c);
  auto schema = resolve_schema(c.schema);
  auto labeled = labeled_candidates(docs, schema, c, c.train.max_csd);
  auto stats = corpus_stats(docs, labeled);
  const auto& out = require_set(c.out_dir, "out_dir");
  write_file(out / "candidates.jsonl", dump_candidates(labeled.candidates));
  write_file(out / "statistics.txt", format_stats(stats));
  write_provenance(out, "candidates", c);
  return stats;
}

// --- train -------------------------------------------------------------------------

inline EncoderFactory encoder_factory(const ExperimentConfig& c, const Tokenizer& tokenizer) {
  std::string spec = c.encoder;
  if (spec.rfind("reference:", 0) != 0) encoder_from_spec(spec);  // raises UnsupportedEncoder
  spec += ",vocab=" + std::to_string(tokenizer.vocab_size()) + ",positions=" + std::to_string(c.train.max_len);
  if (spec.find("seed=") == std::string::npos) spec += ",seed=" + std::to_string(c.train.seed);
  encoder_from_spec(spec);  // validate shape once, up front
  return [spec] { return encoder_from_spec(spec); };
}

inline std::shared_ptr<const BasicTokenizer> corpus_tokenizer(std::span<const Document> docs, const ExperimentConfig& c) {
  std::vector<std::string_view> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  return std::make_shared<BasicTokenizer>(build_tokenizer(texts, c.vocab_min_count));
}

struct TrainOutcome {
  ModelBundle bundle;
  std::optional<CvResult> cv;
};

inline std::string format_cv_table(const CvResult& cv) {
  std::string out = "epochs\tbatch_size\tmean_f1\tfold_f1\n";
  for (const auto& r : cv.table) {
    std::vector<std::string> folds;
    for (double f : r.fold_f1) folds.push_back(text::fixed(f, 4));
    out += std::to_string(r.epochs) + "\t" + std::to_string(r.batch_size) + "\t" + text::fixed(r.mean_f1, 4) + "\t" +
           text::join(folds, ",") + "\n";
  }
  out += "best\tepochs=" + std::to_string(cv.best.epochs) + "\tbatch_size=" + std::to_string(cv.best.batch_size) + "\n";
  return out;
}

// Cross-validates when requested, then trains on all data with the chosen
// config. Nothing is written; see cmd_train.
inline TrainOutcome train_pipeline(std::span<const Document> docs, const RelationSchema& schema,
                                   const ExperimentConfig& c) {
  validate(c.train);
  check_binary_schema(c.train.strategy, schema);
  auto tokenizer = corpus_tokenizer(docs, c);
  auto factory = encoder_factory(c, *tokenizer);
  auto labeled = labeled_candidates(docs, schema, c, c.train.max_csd);
  auto index = index_documents(docs);
  TrainOutcome outcome;
  TrainConfig cfg = c.train;
  if (c.cross_validate) {
    outcome.cv = cross_validate(labeled.candidates, docs, factory, tokenizer, schema, cfg, c.cv_epochs, c.cv_batch_sizes);
    cfg = outcome.cv->best;
  }
  outcome.bundle = train(labeled.candidates, index, factory, tokenizer, schema, cfg);
  return outcome;
}

inline TrainOutcome cmd_train(const ExperimentConfig& c) {
  auto docs = load_corpus(require_dir(c.train_dir, "train_dir"), c);
  auto schema = resolve_schema(c.schema);
  auto outcome = train_pipeline(docs, schema, c);
  auto dir = resolve_bundle_dir(c.bundle_dir);
  save_bundle(outcome.bundle, dir);
  if (outcome.cv) write_file(dir / "cv.tsv", format_cv_table(*outcome.cv));
  std::string losses;
  for (const auto& [key, r] : outcome.bundle.report) {
    std::vector<std::string> l;
    for (double v : r.epoch_losses) l.push_back(text::format_double(v));
    losses += key + "\tpairs=" + std::to_string(r.pairs) + "\tpositives=" + std::to_string(r.positives) +
              (r.empty_stratum ? "\tEmptyStratum" : "") + (r.skipped ? "\tskipped" : "") + "\tloss=" +
              text::join(l, ",") + "\n";
  }
  write_file(dir / "training.tsv", losses);
  write_provenance(dir, "train", c);
  return outcome;
}

// --- predict ----------------------------------------------------------------------

inline std::vector<PredictedRelation> predict_corpus(std::span<const Document> docs, const ModelBundle& bundle,
                                                     const RelationSchema& schema, const ExperimentConfig& c) {
  auto candidates = generate_candidates(docs, schema, bundle.max_csd);
  PredictOptions opts;
  opts.positive_threshold = c.threshold;
  return predict(candidates.pairs, index_documents(docs), bundle, schema, opts);
}

inline std::vector<PredictedRelation> cmd_predict(const ExperimentConfig& c) {
  auto bundle = load_bundle(resolve_bundle_dir(c.bundle_dir));
  auto docs = load_corpus(require_dir(c.test_dir, "test_dir"), c);
  auto schema = resolve_schema(c.schema);
  if (schema.name() != bundle.schema_name) {
    fail(ErrorCode::InvalidConfig, "bundle was trained with schema '" + bundle.schema_name + "', config names '" +
                                       schema.name() + "'");
  }
  auto predicted = predict_corpus(docs, bundle, schema, c);
  const auto& out = require_set(c.predictions_dir, "predictions_dir");
  write_predictions(predicted, docs, out);
  write_provenance(out, "predict", c);
  return predicted;
}

// --- evaluate ---------------------------------------------------------------------

inline std::string format_csd_reports(const std::map<std::size_t, EvalReport>& by_csd) {
  std::string out = "csd\ttp\tfp\tfn\tprecision\trecall\tf1\n";
  for (const auto& [csd, r] : by_csd) {
    out += std::to_string(csd) + "\t" + std::to_string(r.micro.tp) + "\t" + std::to_string(r.micro.fp) + "\t" +
           std::to_string(r.micro.fn) + "\t" + text::fixed(r.micro.precision, 4) + "\t" +
           text::fixed(r.micro.recall, 4) + "\t" + text::fixed(r.micro.f1, 4) + "\n";
  }
  return out;
}

// Scores <predictions_dir>/<doc>.ann against gold; writes report.txt,
// report.jsonl and report_by_csd.tsv into out_dir (or predictions_dir).
inline EvalReport cmd_evaluate(const ExperimentConfig& c) {
  auto gold = load_corpus(require_dir(c.gold_dir, "gold_dir"), c);
  auto predicted = load_predictions(require_dir(c.predictions_dir, "predictions_dir"), gold);
  auto report = score(gold, predicted);
  auto by_csd = per_csd_breakdown(gold, predicted);
  auto out = c.out_dir.empty() ? c.predictions_dir : c.out_dir;
  write_file(out / "report.txt", format_table(report));
  write_file(out / "report.jsonl", format_jsonl(report));
  write_file(out / "report_by_csd.tsv", format_csd_reports(by_csd));
  write_provenance(out, "evaluate", c);
  return report;
}

// --- experiment --------------------------------------------------------------------

struct ExperimentRow {
  std::string cell;    // "strategy=...;scheme=...;regime=...;max_csd=..."
  std::string status;  // "ok" or "error:<code>"
  Metrics micro;
};

inline std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> grid_cells(
    const ExperimentConfig& c) {
  auto axis = [](const std::vector<std::string>& v, std::string fallback) {
    return v.empty() ? std::vector<std::string>{std::move(fallback)} : v;
  };
  auto strategies = axis(c.grid_strategy, to_string(c.train.strategy));
  auto schemes = axis(c.grid_scheme, to_string(c.train.scheme));
  auto regimes = axis(c.grid_regime, to_string(c.train.regime));
  auto csds = axis(c.grid_max_csd, std::to_string(c.train.max_csd));
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> cells;
  for (const auto& st : strategies)
    for (const auto& sc : schemes)
      for (const auto& re : regimes)
        for (const auto& mc : csds) {
          std::vector<std::pair<std::string, std::string>> settings{
              {"strategy", st}, {"scheme", sc}, {"regime", re}, {"max_csd", mc}};
          std::string name;
          for (const auto& [k, v] : settings) name += (name.empty() ? "" : ";") + k + "=" + v;
          cells.emplace_back(name, settings);
        }
  return cells;
}

inline std::string ledger_line(const ExperimentRow& r) {
  return r.cell + "\t" + r.status + "\t" + std::to_string(r.micro.tp) + "\t" + std::to_string(r.micro.fp) + "\t" +
         std::to_string(r.micro.fn) + "\t" + text::fixed(r.micro.precision, 4) + "\t" +
         text::fixed(r.micro.recall, 4) + "\t" + text::fixed(r.micro.f1, 4) + "\n";
}

inline std::map<std::string, ExperimentRow> read_ledger(const std::filesystem::path& path) {
  std::map<std::string, ExperimentRow> rows;
  if (!std::filesystem::exists(path)) return rows;
  const auto content = read_file(path);
  for (auto line : text::lines(content)) {
    auto f = text::split(line, '\t');
    if (f.size() != 8) continue;  // torn final line from an interrupted run
    ExperimentRow r;
    r.cell = std::string(f[0]);
    r.status = std::string(f[1]);
    r.micro.tp = text::parse_int<std::size_t>(f[2]).value_or(0);
    r.micro.fp = text::parse_int<std::size_t>(f[3]).value_or(0);
    r.micro.fn = text::parse_int<std::size_t>(f[4]).value_or(0);
    r.micro.finalize();
    rows[r.cell] = r;
  }
  return rows;
}

// One row per grid cell (train on train_dir, predict and score on test_dir).
// Completed cells are appended to cells.ledger as they finish and are not
// rerun; failing cells are recorded with their error code.
inline std::vector<ExperimentRow> cmd_experiment(const ExperimentConfig& c, std::ostream* log = nullptr) {
  auto train_docs = load_corpus(require_dir(c.train_dir, "train_dir"), c);
  auto test_docs = load_corpus(require_dir(c.test_dir, "test_dir"), c);
  auto schema = resolve_schema(c.schema);
  const auto& out = require_set(c.out_dir, "out_dir");
  std::filesystem::create_directories(out);
  const auto ledger_path = out / "cells.ledger";
  auto done = read_ledger(ledger_path);
  // Drop a torn trailing line before appending.
  if (std::filesystem::exists(ledger_path)) {
    std::string kept;
    for (const auto& [cell, r] : done) kept += ledger_line(r);
    write_file(ledger_path, kept);
  }
  std::vector<ExperimentRow> rows;
  for (const auto& [name, settings] : grid_cells(c)) {
    if (auto it = done.find(name); it != done.end()) {
      rows.push_back(it->second);
      if (log) *log << name << "\t(resumed)\n";
      continue;
    }
    ExperimentRow row;
    row.cell = name;
    try {
      ExperimentConfig cell = c;
      for (const auto& [k, v] : settings) apply_setting(cell, k, v);
      auto outcome = train_pipeline(train_docs, schema, cell);
      auto predicted = predict_corpus(test_docs, outcome.bundle, schema, cell);
      row.micro = score(test_docs, predicted).micro;
      row.status = "ok";
    } catch (const Error& e) {
      row.status = "error:" + std::string(to_string(e.code()));
    }
    {
      std::ofstream ledger(ledger_path, std::ios::app | std::ios::binary);
      ledger << ledger_line(row);
      ledger.flush();
      if (!ledger) fail(ErrorCode::IOFailure, "cannot append to " + ledger_path.string());
    }
    if (log) *log << ledger_line(row);
    rows.push_back(row);
  }
  std::string table = "cell\tstatus\ttp\tfp\tfn\tprecision\trecall\tf1\n";
  for (const auto& r : rows) table += ledger_line(r);
  write_file(out / "results.tsv", table);
  write_provenance(out, "experiment", c);
  return rows;
}

}  // namespace relex

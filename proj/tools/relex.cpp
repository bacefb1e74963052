// relex: candidates, train, predict, evaluate, experiment, schema, convert.

#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relex/pipeline.hpp"

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string schema;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_file, "key = value config file");
  app->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  app->add_option("--schema", c.schema, "builtin schema name or schema file");
}

// Flags mapped straight onto config keys.
struct PathFlag {
  const char* flag;
  const char* key;
  const char* help;
  std::string value;
};

relex::ExperimentConfig build_config(const Common& c, const std::vector<PathFlag>& flags) {
  relex::ExperimentConfig cfg;
  if (!c.config_file.empty()) relex::apply_config_text(cfg, relex::read_file(c.config_file));
  if (!c.schema.empty()) relex::apply_setting(cfg, "schema", c.schema);
  for (const auto& f : flags) {
    if (!f.value.empty()) relex::apply_setting(cfg, f.key, f.value);
  }
  for (const auto& o : c.overrides) relex::apply_override(cfg, o);
  return cfg;
}

int convert(const std::string& input, const std::string& out_dir, bool newline_boundary) {
  relex::ParseOptions opts;
  opts.segmenter.newline_is_boundary = newline_boundary;
  std::size_t n = 0;
  const auto content = relex::read_file(input);
  for (auto line : relex::text::lines(content)) {
    if (relex::text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      relex::fail(relex::ErrorCode::MalformedLine, input + ": " + e.what());
    }
    relex::write_document(out_dir, relex::document_from_json(j, opts));
    ++n;
  }
  std::cout << "converted " << n << " documents into " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clinical relation extraction over standoff corpora"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(relex::kVersion));

  Common common;

  auto* cand = app.add_subcommand("candidates", "generate and label candidate pairs, write statistics");
  std::vector<PathFlag> cand_flags{{"--corpus", "corpus_dir", "corpus directory", {}},
                                   {"--out", "out_dir", "output directory", {}}};

  auto* trn = app.add_subcommand("train", "train a model bundle (cross-validating when cross_validate = true)");
  std::vector<PathFlag> train_flags{{"--train", "train_dir", "training corpus directory", {}},
                                    {"--bundle", "bundle_dir", "bundle output directory", {}}};

  auto* pred = app.add_subcommand("predict", "apply a bundle to a corpus");
  std::vector<PathFlag> pred_flags{{"--bundle", "bundle_dir", "bundle directory", {}},
                                   {"--test", "test_dir", "corpus directory", {}},
                                   {"--predictions", "predictions_dir", "prediction output directory", {}}};

  auto* eval = app.add_subcommand("evaluate", "strict micro P/R/F1 of predictions against gold");
  std::vector<PathFlag> eval_flags{{"--gold", "gold_dir", "gold corpus directory", {}},
                                   {"--predictions", "predictions_dir", "prediction directory", {}},
                                   {"--out", "out_dir", "report directory (default: predictions)", {}}};

  auto* exp = app.add_subcommand("experiment", "run a strategy x scheme x regime x max_csd grid");
  std::vector<PathFlag> exp_flags{{"--train", "train_dir", "training corpus directory", {}},
                                  {"--test", "test_dir", "test corpus directory", {}},
                                  {"--out", "out_dir", "results directory", {}}};

  auto* sch = app.add_subcommand("schema", "print a schema's rule table");
  std::string schema_name = "n2c2";
  sch->add_option("name", schema_name, "builtin name or schema file");

  auto* conv = app.add_subcommand("convert", "JSON-lines documents to .txt/.ann pairs");
  std::string conv_in, conv_out;
  bool conv_newline = true;
  conv->add_option("input", conv_in, "JSON-lines file")->required();
  conv->add_option("out", conv_out, "output directory")->required();
  conv->add_option("--newline-boundary", conv_newline, "treat newlines as sentence boundaries");

  std::pair<CLI::App*, std::vector<PathFlag>*> with_flags[] = {
      {cand, &cand_flags}, {trn, &train_flags}, {pred, &pred_flags}, {eval, &eval_flags}, {exp, &exp_flags}};
  for (auto& [sub, flags] : with_flags) {
    add_common(sub, common);
    for (auto& f : *flags) sub->add_option(f.flag, f.value, f.help);
  }
  bool allow_out_of_grid = false;
  trn->add_flag("--allow-out-of-grid", allow_out_of_grid, "accept epochs/batch size/folds outside the grid");
  exp->add_flag("--allow-out-of-grid", allow_out_of_grid, "accept epochs/batch size/folds outside the grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (sch->parsed()) {
      std::cout << relex::to_text(relex::resolve_schema(schema_name));
      return 0;
    }
    if (conv->parsed()) return convert(conv_in, conv_out, conv_newline);

    for (auto& [sub, flags] : with_flags) {
      if (!sub->parsed()) continue;
      auto cfg = build_config(common, *flags);
      if (allow_out_of_grid) relex::apply_setting(cfg, "allow_out_of_grid", "true");
      if (sub == cand) {
        std::cout << relex::format_stats(relex::cmd_candidates(cfg));
      } else if (sub == trn) {
        auto outcome = relex::cmd_train(cfg);
        if (outcome.cv) std::cout << relex::format_cv_table(*outcome.cv);
        std::cout << "bundle written to " << relex::resolve_bundle_dir(cfg.bundle_dir).string() << "\n";
      } else if (sub == pred) {
        auto rels = relex::cmd_predict(cfg);
        std::cout << rels.size() << " relations predicted\n";
      } else if (sub == eval) {
        std::cout << relex::format_table(relex::cmd_evaluate(cfg));
      } else if (sub == exp) {
        relex::cmd_experiment(cfg, &std::cout);
      }
      return 0;
    }
  } catch (const relex::Error& e) {
    std::cerr << "relex: " << e.what() << "\n";
    return relex::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "relex: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

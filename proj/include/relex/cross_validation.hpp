#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "relex/candidates.hpp"
#include "relex/evaluation.hpp"
#include "relex/inference.hpp"
#include "relex/model.hpp"

namespace relex {

struct CvRow {
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double mean_f1 = 0.0;
  std::vector<double> fold_f1;
};

struct CvResult {
  TrainConfig best;
  std::vector<CvRow> table;  // ordered by (epochs, batch_size)
};

// Highest mean F1; ties go to fewer epochs, then the smaller batch.
inline const CvRow& best_row(const std::vector<CvRow>& table) {
  if (table.empty()) fail(ErrorCode::InvalidConfig, "empty cross-validation table");
  const CvRow* best = &table.front();
  for (const auto& row : table) {
    if (row.mean_f1 > best->mean_f1 ||
        (row.mean_f1 == best->mean_f1 &&
         std::tie(row.epochs, row.batch_size) < std::tie(best->epochs, best->batch_size))) {
      best = &row;
    }
  }
  return *best;
}

// Document-level fold assignment: documents are shuffled with the seed and
// dealt round-robin, so all pairs of a document share a fold.
inline std::map<std::string, std::size_t> assign_folds(std::span<const Document> documents, std::size_t folds,
                                                       std::uint64_t seed) {
  std::vector<std::size_t> order(documents.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  detail::shuffle(order, rng);
  std::map<std::string, std::size_t> fold_of;
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[documents[order[i]].doc_id] = i % folds;
  return fold_of;
}

// Grid search over epochs x batch size with k-fold cross-validation, scored by
// strict micro F1 against each held-out fold's gold relations. Training for
// fewer epochs is a prefix of training for more (fixed learning rate, same
// seeded shuffles), so each (batch size, fold) is trained once to the largest
// epoch count and evaluated after every epoch in the grid.
inline CvResult cross_validate(const CandidateSet& labeled, std::span<const Document> documents,
                               const EncoderFactory& make_encoder, std::shared_ptr<const Tokenizer> tokenizer,
                               const RelationSchema& schema, const TrainConfig& base,
                               std::vector<std::size_t> epoch_grid, std::vector<std::size_t> batch_grid) {
  std::sort(epoch_grid.begin(), epoch_grid.end());
  epoch_grid.erase(std::unique(epoch_grid.begin(), epoch_grid.end()), epoch_grid.end());
  std::sort(batch_grid.begin(), batch_grid.end());
  batch_grid.erase(std::unique(batch_grid.begin(), batch_grid.end()), batch_grid.end());
  if (epoch_grid.empty() || batch_grid.empty()) fail(ErrorCode::InvalidConfig, "empty cross-validation grid");
  for (auto e : epoch_grid) {
    for (auto b : batch_grid) {
      TrainConfig c = base;
      c.epochs = e;
      c.batch_size = b;
      validate(c);
    }
  }
  const std::size_t folds = base.folds;
  std::size_t positives = 0;
  for (const auto& p : labeled.pairs) positives += p.positive() ? 1 : 0;
  if (positives < folds || documents.size() < folds) {
    fail(ErrorCode::InsufficientData, std::to_string(positives) + " positive pairs over " +
                                          std::to_string(documents.size()) + " documents cannot fill " +
                                          std::to_string(folds) + " folds");
  }
  auto fold_of = assign_folds(documents, folds, base.seed);
  auto index = index_documents(documents);
  const std::size_t max_epochs = epoch_grid.back();
  const std::set<std::size_t> wanted(epoch_grid.begin(), epoch_grid.end());

  // f1[(epochs, batch)][fold]
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> f1;
  for (auto batch : batch_grid) {
    for (std::size_t fold = 0; fold < folds; ++fold) {
      CandidateSet train_part, held_out;
      train_part.max_csd = held_out.max_csd = labeled.max_csd;
      for (const auto& p : labeled.pairs) (fold_of.at(p.doc_id) == fold ? held_out : train_part).pairs.push_back(p);
      std::vector<RelationKey> gold;
      for (const auto& d : documents) {
        if (fold_of.at(d.doc_id) != fold) continue;
        for (const auto& r : d.gold_relations) gold.emplace_back(d.doc_id, r.arg1, r.arg2, r.category);
      }
      std::map<std::size_t, std::vector<RelationKey>> predicted;  // epoch -> predictions
      auto on_epoch = [&](const std::string&, std::size_t epoch, const ModelGroup& group) {
        if (!wanted.count(epoch)) return;
        auto& out = predicted[epoch];
        for (const auto& p : held_out.pairs) {
          if (!group.csd.contains(p.csd)) continue;
          auto rel = classify_pair(p, *index.at(p.doc_id), group, *tokenizer, base.strategy, schema);
          if (rel) out.emplace_back(rel->doc_id, rel->arg1, rel->arg2, rel->category);
        }
      };
      TrainConfig cfg = base;
      cfg.epochs = max_epochs;
      cfg.batch_size = batch;
      train(train_part, index, make_encoder, tokenizer, schema, cfg, on_epoch);
      for (auto e : epoch_grid) f1[{e, batch}].push_back(score_keys(gold, predicted[e]).micro.f1);
    }
  }

  CvResult result;
  for (auto e : epoch_grid) {
    for (auto b : batch_grid) {
      const auto& scores = f1.at({e, b});
      double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
      result.table.push_back({e, b, mean, scores});
    }
  }
  const CvRow& best = best_row(result.table);
  result.best = base;
  result.best.epochs = best.epochs;
  result.best.batch_size = best.batch_size;
  return result;
}

}  // namespace relex

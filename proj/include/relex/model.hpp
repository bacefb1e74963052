#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "relex/candidates.hpp"
#include "relex/encoder.hpp"
#include "relex/encoding.hpp"
#include "relex/error.hpp"
#include "relex/nn.hpp"
#include "relex/schema.hpp"
#include "relex/tokenizer.hpp"

namespace relex {

inline constexpr std::string_view kPositive = "POSITIVE";
inline constexpr std::string_view kUnifiedGroup = "ALL";

// Which contextual vectors are concatenated into the relation representation.
enum class Scheme {
  kCls = 1,          // [T_cls]
  kClsStarts = 2,    // [T_cls, T_S1, T_S2]
  kClsMarkers = 3,   // [T_cls, T_S1, T_E1, T_S2, T_E2]
  kStarts = 4,       // [T_S1, T_S2]
};

inline std::vector<std::size_t> representation_positions(const Positions& p, Scheme scheme) {
  switch (scheme) {
    case Scheme::kCls: return {p.cls};
    case Scheme::kClsStarts: return {p.cls, p.s1, p.s2};
    case Scheme::kClsMarkers: return {p.cls, p.s1, p.e1, p.s2, p.e2};
    case Scheme::kStarts: return {p.s1, p.s2};
  }
  return {};
}

inline std::size_t scheme_width(Scheme scheme) {
  switch (scheme) {
    case Scheme::kCls: return 1;
    case Scheme::kClsStarts: return 3;
    case Scheme::kClsMarkers: return 5;
    case Scheme::kStarts: return 2;
  }
  return 0;
}

inline std::size_t scheme_dimension(Scheme scheme, std::size_t hidden) { return scheme_width(scheme) * hidden; }

inline Scheme parse_scheme(std::string_view s) {
  if (s == "1" || s == "SCHEME_1") return Scheme::kCls;
  if (s == "2" || s == "SCHEME_2") return Scheme::kClsStarts;
  if (s == "3" || s == "SCHEME_3") return Scheme::kClsMarkers;
  if (s == "4" || s == "SCHEME_4") return Scheme::kStarts;
  fail(ErrorCode::InvalidConfig, "unknown representation scheme '" + std::string(s) + "'");
}

inline std::string to_string(Scheme scheme) { return std::to_string(static_cast<int>(scheme)); }

inline RowVector extract_representation(const Matrix& encoder_output, const Positions& positions,
                                        Scheme scheme) {
  auto picks = representation_positions(positions, scheme);
  const auto h = encoder_output.cols();
  RowVector rep(static_cast<Eigen::Index>(picks.size()) * h);
  for (std::size_t i = 0; i < picks.size(); ++i) {
    if (picks[i] >= static_cast<std::size_t>(encoder_output.rows())) {
      fail(ErrorCode::PositionOutOfRange, "position " + std::to_string(picks[i]) +
                                              " outside sequence of length " +
                                              std::to_string(encoder_output.rows()));
    }
    rep.segment(static_cast<Eigen::Index>(i) * h, h) = encoder_output.row(static_cast<Eigen::Index>(picks[i]));
  }
  return rep;
}

// Gradient of the representation routed back to the sequence positions it came from.
inline Matrix scatter_representation_grad(const RowVector& d_rep, const Positions& positions,
                                          Scheme scheme, Eigen::Index length, Eigen::Index hidden) {
  Matrix d = Matrix::Zero(length, hidden);
  auto picks = representation_positions(positions, scheme);
  for (std::size_t i = 0; i < picks.size(); ++i) {
    d.row(static_cast<Eigen::Index>(picks[i])) += d_rep.segment(static_cast<Eigen::Index>(i) * hidden, hidden);
  }
  return d;
}

enum class Strategy { kBinary, kMultiClass };
enum class Regime { kUnified, kDistanceSpecific };
enum class EmptyStratumPolicy { kTrain, kSkip, kFail };
enum class ClassWeighting { kNone, kInverseFrequency };

inline std::string to_string(Strategy s) { return s == Strategy::kBinary ? "binary" : "multi-class"; }
inline std::string to_string(Regime r) { return r == Regime::kUnified ? "UNIFIED" : "DISTANCE-SPECIFIC"; }

inline Strategy parse_strategy(std::string_view s) {
  if (s == "binary") return Strategy::kBinary;
  if (s == "multi-class" || s == "multiclass") return Strategy::kMultiClass;
  fail(ErrorCode::InvalidConfig, "unknown strategy '" + std::string(s) + "'");
}

inline Regime parse_regime(std::string_view s) {
  if (s == "UNIFIED" || s == "unified") return Regime::kUnified;
  if (s == "DISTANCE-SPECIFIC" || s == "distance-specific") return Regime::kDistanceSpecific;
  fail(ErrorCode::InvalidConfig, "unknown regime '" + std::string(s) + "'");
}

// Linear map from the scheme representation to class logits, then softmax.
class RelationHead {
 public:
  RelationHead(Scheme scheme, std::size_t hidden, std::vector<std::string> classes, std::uint64_t seed)
      : scheme_(scheme),
        hidden_(hidden),
        classes_(std::move(classes)),
        weight_("head.weight", static_cast<Eigen::Index>(scheme_dimension(scheme, hidden)),
                static_cast<Eigen::Index>(classes_.size())),
        bias_("head.bias", 1, static_cast<Eigen::Index>(classes_.size())) {
    if (classes_.size() < 2) fail(ErrorCode::InvalidShape, "relation head needs at least two classes");
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    nn::init_normal(weight_, 0.02, rng);
  }

  RelationHead(const RelationHead& other)
      : scheme_(other.scheme_), hidden_(other.hidden_), classes_(other.classes_),
        weight_(other.weight_), bias_(other.bias_) {}
  RelationHead& operator=(const RelationHead& other) {
    scheme_ = other.scheme_;
    hidden_ = other.hidden_;
    classes_ = other.classes_;
    weight_ = other.weight_;
    bias_ = other.bias_;
    return *this;
  }

  Scheme scheme() const { return scheme_; }
  std::size_t hidden_size() const { return hidden_; }
  std::size_t input_dim() const { return scheme_dimension(scheme_, hidden_); }
  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t num_classes() const { return classes_.size(); }

  nn::Parameter& weight() { return weight_; }
  nn::Parameter& bias() { return bias_; }
  std::vector<nn::Parameter*> parameters() { return {&weight_, &bias_}; }
  std::vector<const nn::Parameter*> parameters() const { return {&weight_, &bias_}; }

  RowVector logits(const RowVector& rep) const {
    if (static_cast<std::size_t>(rep.size()) != input_dim()) {
      fail(ErrorCode::DimensionMismatch, "representation has " + std::to_string(rep.size()) +
                                             " values, head expects " + std::to_string(input_dim()));
    }
    return rep * weight_.value + bias_.value;
  }

  RowVector probabilities(const RowVector& rep) const { return nn::softmax(logits(rep)); }

  // Accumulates head gradients and returns dL/d(rep).
  RowVector backward(const RowVector& rep, const RowVector& d_logits) {
    weight_.grad.noalias() += rep.transpose() * d_logits;
    bias_.grad += d_logits;
    return d_logits * weight_.value.transpose();
  }

  std::size_t index_of(std::string_view label) const {
    auto it = std::find(classes_.begin(), classes_.end(), label);
    if (it == classes_.end()) fail(ErrorCode::InvalidConfig, "label '" + std::string(label) + "' is not a head class");
    return static_cast<std::size_t>(it - classes_.begin());
  }

 private:
  Scheme scheme_;
  std::size_t hidden_;
  std::vector<std::string> classes_;
  nn::Parameter weight_;
  nn::Parameter bias_;
};

inline RowVector instance_probabilities(const EncodedInstance& inst, const Encoder& encoder,
                                        const RelationHead& head) {
  return head.probabilities(extract_representation(encoder.encode(inst), inst.positions, head.scheme()));
}

// Batch x classes probability matrix.
inline Matrix forward(const Batch& batch, const Encoder& encoder, const RelationHead& head) {
  if (head.input_dim() != scheme_dimension(head.scheme(), encoder.hidden_size())) {
    fail(ErrorCode::DimensionMismatch, "head built for hidden size " + std::to_string(head.hidden_size()) +
                                           ", encoder has " + std::to_string(encoder.hidden_size()));
  }
  Matrix out(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(head.num_classes()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = instance_probabilities(batch.instances[i], encoder, head);
  }
  return out;
}

// --- configuration -------------------------------------------------------------

struct CsdRange {
  std::size_t lo = 0;
  std::size_t hi = 0;

  bool contains(std::size_t csd) const { return lo <= csd && csd <= hi; }
  std::string key() const {
    return "csd" + std::to_string(lo) + (hi != lo ? "-" + std::to_string(hi) : "");
  }
  friend bool operator==(const CsdRange&, const CsdRange&) = default;
};

// Fine-tuning grid and fixed defaults.
inline constexpr std::size_t kMinEpochs = 3;
inline constexpr std::size_t kMaxEpochs = 6;
inline constexpr std::size_t kBatchSizes[] = {4, 8, 16};
inline constexpr std::size_t kFolds = 5;
inline constexpr double kLearningRate = 1e-5;
inline constexpr std::uint64_t kSeed = 13;

struct TrainConfig {
  Strategy strategy = Strategy::kBinary;
  Scheme scheme = Scheme::kClsMarkers;
  double learning_rate = kLearningRate;
  std::uint64_t seed = kSeed;
  std::size_t epochs = 3;
  std::size_t batch_size = 8;
  std::size_t folds = kFolds;
  std::size_t max_csd = kDefaultMaxCsd;
  Regime regime = Regime::kUnified;
  std::size_t max_len = kDefaultMaxLen;
  ClassWeighting weighting = ClassWeighting::kNone;
  EmptyStratumPolicy empty_stratum = EmptyStratumPolicy::kTrain;
  std::vector<CsdRange> csd_groups;  // empty: one group per CSD value
  bool allow_out_of_grid = false;

  // Groups trained under this config, in routing order.
  std::vector<CsdRange> groups() const {
    if (regime == Regime::kUnified) return {{0, max_csd}};
    if (!csd_groups.empty()) return csd_groups;
    std::vector<CsdRange> out;
    for (std::size_t c = 0; c <= max_csd; ++c) out.push_back({c, c});
    return out;
  }

  std::string group_key(const CsdRange& r) const {
    return regime == Regime::kUnified ? std::string(kUnifiedGroup) : r.key();
  }
};

inline void validate(const TrainConfig& c) {
  auto bad = [](const std::string& why) { fail(ErrorCode::InvalidConfig, why); };
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) bad("learning_rate must be positive");
  if (c.epochs == 0) bad("epochs must be positive");
  if (c.batch_size == 0) bad("batch_size must be positive");
  if (c.folds < 2) bad("folds must be at least 2");
  if (c.max_len < 7) bad("max_len must leave room for framing and four markers");
  if (!c.allow_out_of_grid) {
    if (c.epochs < kMinEpochs || c.epochs > kMaxEpochs) {
      bad("epochs " + std::to_string(c.epochs) + " outside [3, 6] (set allow_out_of_grid to override)");
    }
    if (std::find(std::begin(kBatchSizes), std::end(kBatchSizes), c.batch_size) == std::end(kBatchSizes)) {
      bad("batch_size " + std::to_string(c.batch_size) + " not in {4, 8, 16} (set allow_out_of_grid to override)");
    }
    if (c.folds != kFolds) bad("folds must be 5 (set allow_out_of_grid to override)");
  }
  if (c.regime == Regime::kDistanceSpecific && !c.csd_groups.empty()) {
    std::vector<bool> covered(c.max_csd + 1, false);
    for (const auto& g : c.csd_groups) {
      if (g.lo > g.hi || g.hi > c.max_csd) bad("csd group " + g.key() + " outside 0.." + std::to_string(c.max_csd));
      for (std::size_t v = g.lo; v <= g.hi; ++v) {
        if (covered[v]) bad("csd " + std::to_string(v) + " appears in two groups");
        covered[v] = true;
      }
    }
    if (std::find(covered.begin(), covered.end(), false) != covered.end()) {
      bad("csd groups must cover 0.." + std::to_string(c.max_csd));
    }
  }
}

inline std::vector<CsdRange> parse_csd_groups(std::string_view s) {
  std::vector<CsdRange> out;
  for (auto part : text::split(s, ',')) {
    part = text::trim(part);
    if (part.empty()) continue;
    auto dash = part.find('-');
    auto lo = text::parse_int<std::size_t>(part.substr(0, dash));
    auto hi = dash == std::string_view::npos ? lo : text::parse_int<std::size_t>(part.substr(dash + 1));
    if (!lo || !hi) fail(ErrorCode::InvalidConfig, "bad csd group '" + std::string(part) + "'");
    out.push_back({*lo, *hi});
  }
  return out;
}

inline std::string format_csd_groups(const std::vector<CsdRange>& groups) {
  std::vector<std::string> parts;
  for (const auto& g : groups) {
    parts.push_back(std::to_string(g.lo) + (g.hi != g.lo ? "-" + std::to_string(g.hi) : ""));
  }
  return text::join(parts, ",");
}

inline std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& c) {
  return {
      {"strategy", to_string(c.strategy)},
      {"scheme", to_string(c.scheme)},
      {"learning_rate", text::format_double(c.learning_rate)},
      {"seed", std::to_string(c.seed)},
      {"epochs", std::to_string(c.epochs)},
      {"batch_size", std::to_string(c.batch_size)},
      {"folds", std::to_string(c.folds)},
      {"max_csd", std::to_string(c.max_csd)},
      {"regime", to_string(c.regime)},
      {"max_len", std::to_string(c.max_len)},
      {"class_weighting", c.weighting == ClassWeighting::kNone ? "none" : "inverse"},
      {"empty_stratum", c.empty_stratum == EmptyStratumPolicy::kTrain  ? "train"
                        : c.empty_stratum == EmptyStratumPolicy::kSkip ? "skip"
                                                                       : "error"},
      {"csd_groups", format_csd_groups(c.csd_groups)},
      {"allow_out_of_grid", c.allow_out_of_grid ? "true" : "false"},
  };
}

inline std::string serialize(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : to_key_values(c)) out += k + "=" + v + "\n";
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::InvalidConfig, std::string(key) + " must be true or false");
}

// Applies one key to the config; returns false for keys it does not own.
inline bool apply_setting(TrainConfig& c, std::string_view key, std::string_view value) {
  auto num = [&](auto& field) {
    using T = std::decay_t<decltype(field)>;
    auto v = text::parse_int<T>(value);
    if (!v) fail(ErrorCode::InvalidConfig, std::string(key) + " must be a non-negative integer");
    field = *v;
  };
  if (key == "strategy") c.strategy = parse_strategy(value);
  else if (key == "scheme") c.scheme = parse_scheme(value);
  else if (key == "learning_rate") {
    auto v = text::parse_double(value);
    if (!v) fail(ErrorCode::InvalidConfig, "learning_rate must be a number");
    c.learning_rate = *v;
  } else if (key == "seed") num(c.seed);
  else if (key == "epochs") num(c.epochs);
  else if (key == "batch_size") num(c.batch_size);
  else if (key == "folds") num(c.folds);
  else if (key == "max_csd") num(c.max_csd);
  else if (key == "regime") c.regime = parse_regime(value);
  else if (key == "max_len") num(c.max_len);
  else if (key == "class_weighting") {
    if (value == "none") c.weighting = ClassWeighting::kNone;
    else if (value == "inverse") c.weighting = ClassWeighting::kInverseFrequency;
    else fail(ErrorCode::InvalidConfig, "class_weighting must be none or inverse");
  } else if (key == "empty_stratum") {
    if (value == "train") c.empty_stratum = EmptyStratumPolicy::kTrain;
    else if (value == "skip") c.empty_stratum = EmptyStratumPolicy::kSkip;
    else if (value == "error") c.empty_stratum = EmptyStratumPolicy::kFail;
    else fail(ErrorCode::InvalidConfig, "empty_stratum must be train, skip or error");
  } else if (key == "csd_groups") c.csd_groups = parse_csd_groups(value);
  else if (key == "allow_out_of_grid") c.allow_out_of_grid = parse_bool(key, value);
  else return false;
  return true;
}

inline TrainConfig parse_train_config(std::string_view content) {
  TrainConfig c;
  for (auto line : text::lines(content)) {
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(ErrorCode::InvalidConfig, "expected key=value: " + std::string(line));
    auto key = text::trim(line.substr(0, eq));
    if (!apply_setting(c, key, text::trim(line.substr(eq + 1)))) {
      fail(ErrorCode::InvalidConfig, "unknown train setting '" + std::string(key) + "'");
    }
  }
  return c;
}

// --- labels ----------------------------------------------------------------------

// Class list of the head: NEGATIVE first, then POSITIVE or the schema categories.
inline std::vector<std::string> class_list(Strategy strategy, const RelationSchema& schema) {
  std::vector<std::string> out{std::string(kNegative)};
  if (strategy == Strategy::kBinary) {
    out.emplace_back(kPositive);
  } else {
    out.insert(out.end(), schema.categories().begin(), schema.categories().end());
  }
  return out;
}

// Binary strategy renames every non-NEGATIVE label to POSITIVE.
inline std::string training_label(const CandidatePair& p, Strategy strategy) {
  if (strategy == Strategy::kBinary && p.positive()) return std::string(kPositive);
  return p.label;
}

inline void check_binary_schema(Strategy strategy, const RelationSchema& schema) {
  if (strategy == Strategy::kBinary && !schema.unambiguous() && schema.priority().empty()) {
    fail(ErrorCode::AmbiguousSchemaForBinary,
         "schema '" + schema.name() + "' maps a type pair to several categories; binary strategy "
         "needs a priority list");
  }
}

// --- bundle ------------------------------------------------------------------------

struct ModelGroup {
  CsdRange csd;
  std::unique_ptr<Encoder> encoder;
  RelationHead head;
  TrainConfig config;
  std::string tokenizer_fingerprint;

  ModelGroup(CsdRange r, std::unique_ptr<Encoder> enc, RelationHead h, TrainConfig c, std::string fp)
      : csd(r), encoder(std::move(enc)), head(std::move(h)), config(std::move(c)), tokenizer_fingerprint(std::move(fp)) {}
};

struct GroupReport {
  std::size_t pairs = 0;
  std::size_t positives = 0;
  std::vector<double> epoch_losses;
  bool empty_stratum = false;
  bool skipped = false;
};

struct ModelBundle {
  Regime regime = Regime::kUnified;
  Strategy strategy = Strategy::kBinary;
  Scheme scheme = Scheme::kClsMarkers;
  std::size_t max_csd = kDefaultMaxCsd;
  std::string schema_name;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::map<std::string, ModelGroup> groups;
  std::map<std::string, CsdRange> skipped_groups;  // not trained (EmptyStratum with skip policy)
  std::map<std::string, GroupReport> report;

  const ModelGroup& group(const std::string& key) const {
    auto it = groups.find(key);
    if (it == groups.end()) fail(ErrorCode::MissingGroup, "bundle has no group " + key);
    return it->second;
  }
};

using EncoderFactory = std::function<std::unique_ptr<Encoder>()>;
// Called after every epoch of every group: (group key, 1-based epoch, model).
using EpochCallback = std::function<void(const std::string&, std::size_t, const ModelGroup&)>;

struct TrainingExample {
  EncodedInstance instance;
  std::size_t label = 0;
};

inline std::vector<double> class_weights(const std::vector<TrainingExample>& data, std::size_t classes,
                                         ClassWeighting weighting) {
  std::vector<double> w(classes, 1.0);
  if (weighting == ClassWeighting::kNone || data.empty()) return w;
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& ex : data) ++counts[ex.label];
  std::size_t present = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto n) { return n > 0; }));
  for (std::size_t k = 0; k < classes; ++k) {
    if (counts[k]) w[k] = static_cast<double>(data.size()) / (static_cast<double>(present * counts[k]));
  }
  return w;
}

// Mean weighted cross-entropy of one mini-batch; accumulates gradients into
// encoder and head (loss is averaged over the batch).
inline double accumulate_batch_gradients(std::span<const TrainingExample* const> batch, Encoder& encoder,
                                         RelationHead& head, const std::vector<double>& weights) {
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  const auto h = static_cast<Eigen::Index>(encoder.hidden_size());
  for (const TrainingExample* ex : batch) {
    auto pass = encoder.forward(ex->instance.token_ids, ex->instance.segment_flags);
    RowVector rep = extract_representation(pass->output(), ex->instance.positions, head.scheme());
    RowVector probs = head.probabilities(rep);
    const auto y = static_cast<Eigen::Index>(ex->label);
    const double w = weights[ex->label];
    loss += -w * std::log(std::max(probs(y), 1e-300)) * scale;
    RowVector d_logits = probs;
    d_logits(y) -= 1.0;
    d_logits *= w * scale;
    RowVector d_rep = head.backward(rep, d_logits);
    pass->backward(scatter_representation_grad(d_rep, ex->instance.positions, head.scheme(),
                                               pass->output().rows(), h));
  }
  return loss;
}

namespace detail {

// Fisher-Yates driven by the raw engine output, so the permutation depends on
// the seed alone and not on library distribution implementations.
inline void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

// Fine-tunes one encoder + head on `data` with Adam at a fixed learning rate.
inline GroupReport train_group(std::vector<TrainingExample>& data, ModelGroup& group,
                               const std::string& key, const EpochCallback& on_epoch) {
  const auto& cfg = group.config;
  GroupReport report;
  report.pairs = data.size();
  std::vector<nn::Parameter*> params = group.encoder->parameters();
  for (auto* p : group.head.parameters()) params.push_back(p);
  nn::Adam opt(params, cfg.learning_rate);
  auto weights = class_weights(data, group.head.num_classes(), cfg.weighting);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    detail::shuffle(order, rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const TrainingExample*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
      opt.zero_grad();
      total += accumulate_batch_gradients(batch, *group.encoder, group.head, weights) *
               static_cast<double>(batch.size());
      opt.step();
    }
    report.epoch_losses.push_back(data.empty() ? 0.0 : total / static_cast<double>(data.size()));
    if (on_epoch) on_epoch(key, epoch, group);
  }
  return report;
}

// Trains one group for UNIFIED, or one per CSD group for DISTANCE-SPECIFIC.
// Labels must already be assigned; the binary strategy collapses them here.
inline ModelBundle train(const CandidateSet& labeled, const DocumentIndex& documents,
                         const EncoderFactory& make_encoder, std::shared_ptr<const Tokenizer> tokenizer,
                         const RelationSchema& schema, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  validate(config);
  check_binary_schema(config.strategy, schema);
  ModelBundle bundle;
  bundle.regime = config.regime;
  bundle.strategy = config.strategy;
  bundle.scheme = config.scheme;
  bundle.max_csd = config.max_csd;
  bundle.schema_name = schema.name();
  bundle.tokenizer = tokenizer;
  const auto classes = class_list(config.strategy, schema);

  for (const auto& range : config.groups()) {
    const std::string key = config.group_key(range);
    std::vector<TrainingExample> data;
    std::size_t positives = 0;
    for (const auto& p : labeled.pairs) {
      if (!range.contains(p.csd)) continue;
      TrainingExample ex;
      ex.instance = build_instance(p, lookup_document(documents, p.doc_id), *tokenizer, config.max_len);
      auto label = training_label(p, config.strategy);
      auto it = std::find(classes.begin(), classes.end(), label);
      if (it == classes.end()) {
        fail(ErrorCode::InvalidConfig, "label '" + label + "' is not a category of schema " + schema.name());
      }
      ex.label = static_cast<std::size_t>(it - classes.begin());
      positives += p.positive() ? 1 : 0;
      data.push_back(std::move(ex));
    }
    if (positives == 0) {
      if (config.empty_stratum == EmptyStratumPolicy::kFail) {
        fail(ErrorCode::EmptyStratum, "group " + key + " has no positive examples");
      }
      if (config.empty_stratum == EmptyStratumPolicy::kSkip) {
        bundle.skipped_groups.emplace(key, range);
        GroupReport r;
        r.pairs = data.size();
        r.empty_stratum = true;
        r.skipped = true;
        bundle.report.emplace(key, r);
        continue;
      }
    }
    auto encoder = make_encoder();
    RelationHead head(config.scheme, encoder->hidden_size(), classes, config.seed);
    auto [it, ok] = bundle.groups.emplace(
        key, ModelGroup(range, std::move(encoder), std::move(head), config, tokenizer->fingerprint()));
    GroupReport r = train_group(data, it->second, key, on_epoch);
    r.positives = positives;
    r.empty_stratum = positives == 0;
    bundle.report.emplace(key, std::move(r));
  }
  return bundle;
}

// --- persistence -------------------------------------------------------------------
//
// <dir>/manifest.txt   regime, strategy, scheme, groups, per-group digests
// <dir>/vocab.txt      tokenizer vocabulary
// <dir>/<group>/       encoder.spec, encoder.params, head.classes, head.params,
//                      config.txt (key=value), tokenizer.fingerprint

inline std::string parameter_digest(const ModelGroup& g) {
  auto enc = nn::serialize(std::as_const(*g.encoder).parameters());
  auto head = nn::serialize(g.head.parameters());
  return text::hex64(text::fnv1a(head, text::fnv1a(enc)));
}

inline void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir) {
  auto basic = std::dynamic_pointer_cast<const BasicTokenizer>(bundle.tokenizer);
  if (!basic) fail(ErrorCode::UnsupportedEncoder, "only the built-in tokenizer can be persisted");
  std::filesystem::create_directories(dir);
  std::string manifest;
  manifest += "regime=" + to_string(bundle.regime) + "\n";
  manifest += "strategy=" + to_string(bundle.strategy) + "\n";
  manifest += "scheme=" + to_string(bundle.scheme) + "\n";
  manifest += "max_csd=" + std::to_string(bundle.max_csd) + "\n";
  manifest += "schema=" + bundle.schema_name + "\n";
  manifest += "tokenizer=" + basic->fingerprint() + "\n";
  std::vector<std::string> keys, skipped;
  for (const auto& [k, g] : bundle.groups) keys.push_back(k);
  for (const auto& [k, r] : bundle.skipped_groups) skipped.push_back(k);
  manifest += "groups=" + text::join(keys, ",") + "\n";
  manifest += "skipped=" + text::join(skipped, ",") + "\n";
  for (const auto& [k, g] : bundle.groups) {
    manifest += "group." + k + ".csd=" + format_csd_groups({g.csd}) + "\n";
    manifest += "group." + k + ".digest=" + parameter_digest(g) + "\n";
    auto gdir = dir / k;
    write_file(gdir / "encoder.spec", g.encoder->spec() + "\n");
    write_file(gdir / "encoder.params", nn::serialize(std::as_const(*g.encoder).parameters()));
    write_file(gdir / "head.classes", text::join(g.head.classes(), "\n") + "\n");
    write_file(gdir / "head.params", nn::serialize(g.head.parameters()));
    write_file(gdir / "config.txt", serialize(g.config));
    write_file(gdir / "tokenizer.fingerprint", g.tokenizer_fingerprint + "\n");
  }
  for (const auto& [k, r] : bundle.skipped_groups) {
    manifest += "group." + k + ".csd=" + format_csd_groups({r}) + "\n";
  }
  write_file(dir / "vocab.txt", basic->to_vocab_file());
  write_file(dir / "manifest.txt", manifest);
}

inline std::map<std::string, std::string> read_key_values(std::string_view content) {
  std::map<std::string, std::string> kv;
  for (auto line : text::lines(content)) {
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(ErrorCode::InvalidConfig, "expected key=value: " + std::string(line));
    kv[std::string(text::trim(line.substr(0, eq)))] = std::string(text::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline ModelBundle load_bundle(const std::filesystem::path& dir) {
  auto kv = read_key_values(read_file(dir / "manifest.txt"));
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) fail(ErrorCode::InvalidConfig, "manifest lacks " + k);
    return it->second;
  };
  ModelBundle bundle;
  bundle.regime = parse_regime(need("regime"));
  bundle.strategy = parse_strategy(need("strategy"));
  bundle.scheme = parse_scheme(need("scheme"));
  bundle.max_csd = *text::parse_int<std::size_t>(need("max_csd"));
  bundle.schema_name = need("schema");
  auto tok = std::make_shared<BasicTokenizer>(BasicTokenizer::from_vocab_file(read_file(dir / "vocab.txt")));
  if (tok->fingerprint() != need("tokenizer")) fail(ErrorCode::InvalidConfig, "vocab.txt does not match manifest fingerprint");
  bundle.tokenizer = tok;
  auto range_of = [&](const std::string& key) {
    auto r = parse_csd_groups(need("group." + key + ".csd"));
    if (r.size() != 1) fail(ErrorCode::InvalidConfig, "bad csd range for group " + key);
    return r.front();
  };
  for (auto key : text::split(need("groups"), ',')) {
    if (key.empty()) continue;
    std::string k(key);
    auto gdir = dir / k;
    auto encoder = encoder_from_spec(text::trim(read_file(gdir / "encoder.spec")));
    nn::deserialize(read_file(gdir / "encoder.params"), encoder->parameters());
    std::vector<std::string> classes;
    const auto class_text = read_file(gdir / "head.classes");
    for (auto c : text::lines(class_text)) {
      if (!c.empty()) classes.emplace_back(c);
    }
    auto config = parse_train_config(read_file(gdir / "config.txt"));
    RelationHead head(config.scheme, encoder->hidden_size(), classes, config.seed);
    nn::deserialize(read_file(gdir / "head.params"), head.parameters());
    std::string fp(text::trim(read_file(gdir / "tokenizer.fingerprint")));
    if (fp != tok->fingerprint()) fail(ErrorCode::InvalidConfig, "group " + k + " was trained with another tokenizer");
    bundle.groups.emplace(k, ModelGroup(range_of(k), std::move(encoder), std::move(head), config, fp));
  }
  for (auto key : text::split(need("skipped"), ',')) {
    if (!key.empty()) bundle.skipped_groups.emplace(std::string(key), range_of(std::string(key)));
  }
  return bundle;
}

}  // namespace relex

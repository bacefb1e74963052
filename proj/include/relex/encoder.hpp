#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "relex/encoding.hpp"
#include "relex/error.hpp"
#include "relex/nn.hpp"

namespace relex {

using nn::Matrix;
using nn::RowVector;

// One forward pass with everything needed to push gradients back into the
// encoder that produced it. Valid only while that encoder is alive.
class EncoderPass {
 public:
  virtual ~EncoderPass() = default;
  // (sequence length) x hidden_size contextual vectors.
  virtual const Matrix& output() const = 0;
  // Accumulates parameter gradients for dL/d(output).
  virtual void backward(const Matrix& d_output) = 0;
};

// Contextual encoder contract. Output length equals input length; output is a
// deterministic function of parameters and input. Every parameter is trainable.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual std::size_t hidden_size() const = 0;
  virtual Matrix encode(std::span<const int> token_ids, std::span<const int> segment_flags) const = 0;
  virtual std::unique_ptr<EncoderPass> forward(std::span<const int> token_ids,
                                               std::span<const int> segment_flags) = 0;
  virtual std::vector<nn::Parameter*> parameters() = 0;
  virtual std::vector<const nn::Parameter*> parameters() const = 0;
  virtual std::unique_ptr<Encoder> clone() const = 0;
  // Shape string from which an identical (untrained) encoder can be rebuilt.
  virtual std::string spec() const = 0;

  Matrix encode(const EncodedInstance& inst) const { return encode(inst.token_ids, inst.segment_flags); }

  // Unpadded outputs for every instance in the batch.
  std::vector<Matrix> encode(const Batch& batch) const {
    std::vector<Matrix> out;
    out.reserve(batch.size());
    for (const auto& inst : batch.instances) out.push_back(encode(inst));
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }
};

struct ReferenceEncoderShape {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t hidden = 64;
  std::size_t ffn = 0;  // 0 means 4 * hidden
  std::size_t vocab_size = 0;
  std::size_t max_positions = 512;
  std::uint64_t seed = 13;

  std::size_t ffn_size() const { return ffn ? ffn : 4 * hidden; }
};

// Small post-LN transformer encoder (token + position + segment embeddings,
// multi-head self-attention, GELU feed-forward). Desk-scale stand-in for a
// pretrained encoder; no dropout.
class ReferenceEncoder final : public Encoder {
 public:
  explicit ReferenceEncoder(const ReferenceEncoderShape& shape) : shape_(shape) {
    if (shape.layers == 0 || shape.heads == 0 || shape.hidden == 0 || shape.vocab_size == 0 ||
        shape.max_positions == 0) {
      fail(ErrorCode::InvalidShape, "reference encoder dimensions must be positive");
    }
    if (shape.hidden % shape.heads != 0) {
      fail(ErrorCode::InvalidShape, "hidden size " + std::to_string(shape.hidden) +
                                        " is not divisible by " + std::to_string(shape.heads) + " heads");
    }
    build();
    std::mt19937_64 rng(shape.seed);
    for (auto& p : params_) {
      const auto& n = p.name;
      if (n.ends_with(".gain")) {
        p.value.setOnes();
      } else if (n.ends_with(".bias")) {
        p.value.setZero();
      } else {
        nn::init_normal(p, 0.02, rng);
      }
    }
  }

  ReferenceEncoder(const ReferenceEncoder& other) : shape_(other.shape_) {
    build();
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
  }
  ReferenceEncoder& operator=(const ReferenceEncoder&) = delete;

  const ReferenceEncoderShape& shape() const { return shape_; }
  std::size_t hidden_size() const override { return shape_.hidden; }

  Matrix encode(std::span<const int> ids, std::span<const int> segs) const override {
    return run(ids, segs, nullptr);
  }

  std::unique_ptr<EncoderPass> forward(std::span<const int> ids, std::span<const int> segs) override {
    auto pass = std::make_unique<Pass>(*this);
    pass->cache.ids.assign(ids.begin(), ids.end());
    pass->cache.segs.assign(segs.begin(), segs.end());
    pass->out = run(ids, segs, &pass->cache);
    return pass;
  }

  std::vector<nn::Parameter*> parameters() override {
    std::vector<nn::Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::vector<const nn::Parameter*> parameters() const override {
    std::vector<const nn::Parameter*> out;
    for (const auto& p : params_) out.push_back(&p);
    return out;
  }

  std::unique_ptr<Encoder> clone() const override { return std::make_unique<ReferenceEncoder>(*this); }

  std::string spec() const override {
    return "reference:layers=" + std::to_string(shape_.layers) + ",heads=" + std::to_string(shape_.heads) +
           ",hidden=" + std::to_string(shape_.hidden) + ",ffn=" + std::to_string(shape_.ffn_size()) +
           ",vocab=" + std::to_string(shape_.vocab_size) + ",positions=" +
           std::to_string(shape_.max_positions) + ",seed=" + std::to_string(shape_.seed);
  }

 private:
  struct LayerParams {
    nn::Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *ln1_gain, *ln1_bias;
    nn::Parameter *w1, *b1, *w2, *b2, *ln2_gain, *ln2_bias;
  };

  struct LayerCache {
    Matrix input, q, k, v, context, ffn_pre, ffn_act;
    std::vector<Matrix> attention;  // per head, rows softmax-normalized
    nn::LayerNormCache ln1, ln2;
    Matrix after_attention;  // layer-normed residual, input to the feed-forward block
  };

  struct Cache {
    std::vector<int> ids, segs;
    nn::LayerNormCache embed_ln;
    std::vector<LayerCache> layers;
  };

  class Pass final : public EncoderPass {
   public:
    explicit Pass(ReferenceEncoder& enc) : encoder(enc) {}
    const Matrix& output() const override { return out; }
    void backward(const Matrix& d_output) override { encoder.backprop(cache, d_output); }

    ReferenceEncoder& encoder;
    Cache cache;
    Matrix out;
  };

  nn::Parameter& add(const std::string& name, std::size_t rows, std::size_t cols) {
    params_.emplace_back(name, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    return params_.back();
  }

  void build() {
    const auto h = shape_.hidden;
    const auto f = shape_.ffn_size();
    params_.clear();
    params_.reserve(5 + 16 * shape_.layers);
    token_emb_ = &add("embed.token", shape_.vocab_size, h);
    pos_emb_ = &add("embed.position", shape_.max_positions, h);
    seg_emb_ = &add("embed.segment", 2, h);
    emb_gain_ = &add("embed.ln.gain", 1, h);
    emb_bias_ = &add("embed.ln.bias", 1, h);
    layers_.clear();
    for (std::size_t l = 0; l < shape_.layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      LayerParams lp{};
      lp.wq = &add(p + "attn.query", h, h);
      lp.bq = &add(p + "attn.query.bias", 1, h);
      lp.wk = &add(p + "attn.key", h, h);
      lp.bk = &add(p + "attn.key.bias", 1, h);
      lp.wv = &add(p + "attn.value", h, h);
      lp.bv = &add(p + "attn.value.bias", 1, h);
      lp.wo = &add(p + "attn.output", h, h);
      lp.bo = &add(p + "attn.output.bias", 1, h);
      lp.ln1_gain = &add(p + "attn.ln.gain", 1, h);
      lp.ln1_bias = &add(p + "attn.ln.bias", 1, h);
      lp.w1 = &add(p + "ffn.in", h, f);
      lp.b1 = &add(p + "ffn.in.bias", 1, f);
      lp.w2 = &add(p + "ffn.out", f, h);
      lp.b2 = &add(p + "ffn.out.bias", 1, h);
      lp.ln2_gain = &add(p + "ffn.ln.gain", 1, h);
      lp.ln2_bias = &add(p + "ffn.ln.bias", 1, h);
      layers_.push_back(lp);
    }
  }

  static Matrix affine(const Matrix& x, const nn::Parameter& w, const nn::Parameter& b) {
    Matrix y = x * w.value;
    y.rowwise() += b.value.row(0);
    return y;
  }

  static void affine_backward(const Matrix& dy, const Matrix& x, nn::Parameter& w, nn::Parameter& b,
                              Matrix* dx) {
    w.grad.noalias() += x.transpose() * dy;
    b.grad.row(0) += dy.colwise().sum();
    if (dx) *dx = dy * w.value.transpose();
  }

  Matrix run(std::span<const int> ids, std::span<const int> segs, Cache* cache) const {
    const auto n = static_cast<Eigen::Index>(ids.size());
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    if (ids.size() != segs.size()) fail(ErrorCode::InvalidShape, "token and segment lengths differ");
    if (ids.size() > shape_.max_positions) {
      fail(ErrorCode::InvalidShape, "sequence of " + std::to_string(ids.size()) +
                                        " tokens exceeds " + std::to_string(shape_.max_positions) + " positions");
    }
    Matrix x(n, h);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto id = ids[static_cast<std::size_t>(i)];
      auto seg = segs[static_cast<std::size_t>(i)];
      if (id < 0 || static_cast<std::size_t>(id) >= shape_.vocab_size || seg < 0 || seg > 1) {
        fail(ErrorCode::InvalidShape, "token or segment id out of range");
      }
      x.row(i) = token_emb_->value.row(id) + pos_emb_->value.row(i) + seg_emb_->value.row(seg);
    }
    x = nn::layer_norm(x, *emb_gain_, *emb_bias_, cache ? &cache->embed_ln : nullptr);
    if (cache) cache->layers.resize(layers_.size());

    const auto heads = static_cast<Eigen::Index>(shape_.heads);
    const auto dh = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& lp = layers_[l];
      Matrix q = affine(x, *lp.wq, *lp.bq);
      Matrix k = affine(x, *lp.wk, *lp.bk);
      Matrix v = affine(x, *lp.wv, *lp.bv);
      Matrix context(n, h);
      std::vector<Matrix> attention;
      for (Eigen::Index hd = 0; hd < heads; ++hd) {
        Matrix scores = q.middleCols(hd * dh, dh) * k.middleCols(hd * dh, dh).transpose() * scale;
        nn::softmax_rows_inplace(scores);
        context.middleCols(hd * dh, dh) = scores * v.middleCols(hd * dh, dh);
        if (cache) attention.push_back(std::move(scores));
      }
      Matrix attn_out = affine(context, *lp.wo, *lp.bo);
      LayerCache* lc = cache ? &cache->layers[l] : nullptr;
      Matrix y1 = nn::layer_norm(x + attn_out, *lp.ln1_gain, *lp.ln1_bias, lc ? &lc->ln1 : nullptr);
      Matrix pre = affine(y1, *lp.w1, *lp.b1);
      Matrix act = nn::gelu(pre);
      Matrix ffn_out = affine(act, *lp.w2, *lp.b2);
      Matrix y2 = nn::layer_norm(y1 + ffn_out, *lp.ln2_gain, *lp.ln2_bias, lc ? &lc->ln2 : nullptr);
      if (lc) {
        lc->input = std::move(x);
        lc->q = std::move(q);
        lc->k = std::move(k);
        lc->v = std::move(v);
        lc->context = std::move(context);
        lc->attention = std::move(attention);
        lc->after_attention = y1;
        lc->ffn_pre = std::move(pre);
        lc->ffn_act = std::move(act);
      }
      x = std::move(y2);
    }
    return x;
  }

  void backprop(const Cache& cache, const Matrix& d_output) {
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    const auto heads = static_cast<Eigen::Index>(shape_.heads);
    const auto dh = h / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix dx = d_output;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& lp = layers_[l];
      const auto& lc = cache.layers[l];
      // feed-forward block
      Matrix d_sum2 = nn::layer_norm_backward(dx, lc.ln2, *lp.ln2_gain, *lp.ln2_bias);
      Matrix d_act;
      affine_backward(d_sum2, lc.ffn_act, *lp.w2, *lp.b2, &d_act);
      Matrix d_pre = nn::gelu_backward(d_act, lc.ffn_pre);
      Matrix d_y1;
      affine_backward(d_pre, lc.after_attention, *lp.w1, *lp.b1, &d_y1);
      d_y1 += d_sum2;
      // attention block
      Matrix d_sum1 = nn::layer_norm_backward(d_y1, lc.ln1, *lp.ln1_gain, *lp.ln1_bias);
      Matrix d_context;
      affine_backward(d_sum1, lc.context, *lp.wo, *lp.bo, &d_context);
      Matrix dq(lc.q.rows(), h), dk(lc.k.rows(), h), dv(lc.v.rows(), h);
      for (Eigen::Index hd = 0; hd < heads; ++hd) {
        const Matrix& a = lc.attention[static_cast<std::size_t>(hd)];
        auto dc = d_context.middleCols(hd * dh, dh);
        Matrix d_a = dc * lc.v.middleCols(hd * dh, dh).transpose();
        dv.middleCols(hd * dh, dh) = a.transpose() * dc;
        Matrix d_scores = nn::softmax_rows_backward(d_a, a) * scale;
        dq.middleCols(hd * dh, dh) = d_scores * lc.k.middleCols(hd * dh, dh);
        dk.middleCols(hd * dh, dh) = d_scores.transpose() * lc.q.middleCols(hd * dh, dh);
      }
      Matrix d_in = d_sum1;
      Matrix tmp;
      affine_backward(dq, lc.input, *lp.wq, *lp.bq, &tmp);
      d_in += tmp;
      affine_backward(dk, lc.input, *lp.wk, *lp.bk, &tmp);
      d_in += tmp;
      affine_backward(dv, lc.input, *lp.wv, *lp.bv, &tmp);
      d_in += tmp;
      dx = std::move(d_in);
    }
    Matrix d_emb = nn::layer_norm_backward(dx, cache.embed_ln, *emb_gain_, *emb_bias_);
    for (Eigen::Index i = 0; i < d_emb.rows(); ++i) {
      token_emb_->grad.row(cache.ids[static_cast<std::size_t>(i)]) += d_emb.row(i);
      pos_emb_->grad.row(i) += d_emb.row(i);
      seg_emb_->grad.row(cache.segs[static_cast<std::size_t>(i)]) += d_emb.row(i);
    }
  }

  ReferenceEncoderShape shape_;
  std::vector<nn::Parameter> params_;
  nn::Parameter *token_emb_ = nullptr, *pos_emb_ = nullptr, *seg_emb_ = nullptr;
  nn::Parameter *emb_gain_ = nullptr, *emb_bias_ = nullptr;
  std::vector<LayerParams> layers_;
};

inline std::unique_ptr<Encoder> reference_encoder(std::size_t layers, std::size_t heads,
                                                  std::size_t hidden, std::uint64_t seed,
                                                  std::size_t vocab_size,
                                                  std::size_t max_positions = 512) {
  ReferenceEncoderShape shape;
  shape.layers = layers;
  shape.heads = heads;
  shape.hidden = hidden;
  shape.seed = seed;
  shape.vocab_size = vocab_size;
  shape.max_positions = max_positions;
  return std::make_unique<ReferenceEncoder>(shape);
}

// Parses the string produced by ReferenceEncoder::spec() (missing keys take
// defaults) and rebuilds the untrained encoder.
inline std::unique_ptr<Encoder> encoder_from_spec(std::string_view spec) {
  constexpr std::string_view prefix = "reference:";
  if (spec.substr(0, prefix.size()) != prefix) {
    fail(ErrorCode::UnsupportedEncoder,
         "encoder '" + std::string(spec) + "' is not available; only reference encoders are built in");
  }
  ReferenceEncoderShape shape;
  for (auto kv : text::split(spec.substr(prefix.size()), ',')) {
    if (text::trim(kv).empty()) continue;
    auto parts = text::split(kv, '=');
    auto value = parts.size() == 2 ? text::parse_int<std::uint64_t>(text::trim(parts[1])) : std::nullopt;
    if (!value) fail(ErrorCode::InvalidConfig, "bad encoder setting '" + std::string(kv) + "'");
    auto key = text::trim(parts[0]);
    if (key == "layers") shape.layers = *value;
    else if (key == "heads") shape.heads = *value;
    else if (key == "hidden") shape.hidden = *value;
    else if (key == "ffn") shape.ffn = *value;
    else if (key == "vocab") shape.vocab_size = *value;
    else if (key == "positions") shape.max_positions = *value;
    else if (key == "seed") shape.seed = *value;
    else fail(ErrorCode::InvalidConfig, "unknown encoder setting '" + std::string(key) + "'");
  }
  return std::make_unique<ReferenceEncoder>(shape);
}

}  // namespace relex

#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "relex/error.hpp"
#include "relex/text.hpp"

namespace relex::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

inline void init_normal(Parameter& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) p.value(r, c) = dist(rng);
  }
}

// Adam without weight decay or schedule.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
      params_[i]->value.array() -=
          lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Row-wise layer normalization; cache holds what the backward pass needs.
struct LayerNormCache {
  Matrix normalized;
  Eigen::VectorXd inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

inline Matrix layer_norm(const Matrix& x, const Parameter& gain, const Parameter& bias,
                         LayerNormCache* cache) {
  const double h = static_cast<double>(x.cols());
  Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.cwiseAbs2().rowwise().sum() / h;
  Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt();
  Matrix normalized = centered.array().colwise() * inv_std.array();
  Matrix y = (normalized.array().rowwise() * gain.value.row(0).array()).rowwise() +
             bias.value.row(0).array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, Parameter& gain,
                                  Parameter& bias) {
  const double h = static_cast<double>(dy.cols());
  gain.grad.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  bias.grad.row(0) += dy.colwise().sum();
  Matrix dn = dy.array().rowwise() * gain.value.row(0).array();
  Eigen::VectorXd mean_dn = dn.rowwise().sum() / h;
  Eigen::VectorXd mean_dn_n = (dn.array() * cache.normalized.array()).rowwise().sum() / h;
  Matrix dx = (dn.colwise() - mean_dn) - (cache.normalized.array().colwise() * mean_dn_n.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

// tanh approximation of GELU.
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  });
}

inline Matrix gelu_backward(const Matrix& dy, const Matrix& x) {
  Matrix d = x.unaryExpr([](double v) {
    double u = kGeluC * (v + 0.044715 * v * v * v);
    double t = std::tanh(u);
    double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
  });
  return dy.cwiseProduct(d);
}

inline void softmax_rows_inplace(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

inline RowVector softmax(const RowVector& logits) {
  Matrix m = logits;
  softmax_rows_inplace(m);
  return m.row(0);
}

// dL/dlogits for row-wise softmax outputs `a` given dL/da.
inline Matrix softmax_rows_backward(const Matrix& da, const Matrix& a) {
  Eigen::VectorXd dot = (da.array() * a.array()).rowwise().sum();
  return a.array() * (da.colwise() - dot).array();
}

// --- text persistence ---------------------------------------------------------
//
// "<name> <rows> <cols>" header line, then one line of shortest round-trip
// doubles in column-major order.

inline std::string serialize(const std::vector<const Parameter*>& params) {
  std::string out;
  for (const auto* p : params) {
    out += p->name + " " + std::to_string(p->value.rows()) + " " + std::to_string(p->value.cols()) + "\n";
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      if (i) out += ' ';
      out += text::format_double(p->value.data()[i]);
    }
    out += "\n";
  }
  return out;
}

inline void deserialize(std::string_view content, const std::vector<Parameter*>& params) {
  auto lines = text::lines(content);
  if (lines.size() != 2 * params.size()) {
    fail(ErrorCode::InvalidShape, "parameter file holds " + std::to_string(lines.size() / 2) +
                                      " tensors, expected " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    auto head = text::split_ws(lines[2 * k]);
    if (head.size() != 3 || head[0] != p->name ||
        text::parse_int<Eigen::Index>(head[1]) != p->value.rows() ||
        text::parse_int<Eigen::Index>(head[2]) != p->value.cols()) {
      fail(ErrorCode::InvalidShape, "parameter header mismatch for " + p->name);
    }
    auto values = text::split_ws(lines[2 * k + 1]);
    if (static_cast<Eigen::Index>(values.size()) != p->value.size()) {
      fail(ErrorCode::InvalidShape, "wrong value count for " + p->name);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto v = text::parse_double(values[i]);
      if (!v) fail(ErrorCode::InvalidShape, "bad number in " + p->name);
      p->value.data()[i] = *v;
    }
  }
}

}  // namespace relex::nn

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "s2m/net/layers.hpp"

namespace s2m::net {

struct AdamParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment gradient descent with bias correction.
template <typename S>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const ParamStore<S>& store) { reset(store); }

  void reset(const ParamStore<S>& store) {
    m_.clear();
    v_.clear();
    for (const auto& e : store.entries) {
      m_.push_back(MatX<S>::Zero(e.w.rows(), e.w.cols()));
      v_.push_back(MatX<S>::Zero(e.w.rows(), e.w.cols()));
    }
    t_ = 0;
  }

  void step(ParamStore<S>& store, const AdamParams& p) {
    ++t_;
    const S b1 = static_cast<S>(p.beta1), b2 = static_cast<S>(p.beta2);
    const S corr1 = static_cast<S>(1.0 - std::pow(p.beta1, static_cast<double>(t_)));
    const S corr2 = static_cast<S>(1.0 - std::pow(p.beta2, static_cast<double>(t_)));
    const S lr = static_cast<S>(p.lr), eps = static_cast<S>(p.eps);
    for (std::size_t i = 0; i < store.entries.size(); ++i) {
      auto& w = store.entries[i].w;
      const auto& g = store.entries[i].g;
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * g.array().square();
      w.array() -= lr * (m_[i].array() / corr1) / ((v_[i].array() / corr2).sqrt() + eps);
    }
  }

  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }
  std::vector<MatX<S>>& m() { return m_; }
  std::vector<MatX<S>>& v() { return v_; }
  const std::vector<MatX<S>>& m() const { return m_; }
  const std::vector<MatX<S>>& v() const { return v_; }

 private:
  std::vector<MatX<S>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace s2m::net

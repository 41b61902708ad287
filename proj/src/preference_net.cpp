// Copyright 2026 The stan-mtl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stan/preference_net.hpp"

#include <cmath>

#include "stan/error.hpp"

namespace stan {

namespace {

void attention_softmax(Matrix& z, AttentionAxis axis) {
  if (axis == AttentionAxis::kFeature) softmax_cols(z);
  else softmax_rows(z);
}

Matrix attention_softmax_backward(const Matrix& a, const Matrix& da, AttentionAxis axis) {
  return axis == AttentionAxis::kFeature ? softmax_cols_backward(a, da) : softmax_rows_backward(a, da);
}

}  // namespace

Matrix self_attention(const Matrix& u, const Matrix& wq, const Matrix& wk, const Matrix& wv) {
  const Index d1 = u.rows();
  if (wq.rows() != d1 || wq.cols() != d1 || wk.rows() != d1 || wk.cols() != d1 || wv.rows() != d1 ||
      wv.cols() != d1)
    throw ShapeError("self_attention: W_Q, W_K, W_V must be d1 x d1");
  Matrix scores = (wq * u) * (wk * u).transpose() / std::sqrt(static_cast<double>(d1));
  softmax_rows(scores);
  return scores * (wv * u);
}

Matrix task_attention(const Matrix& u_prime, const Matrix& wk, AttentionAxis axis) {
  if (wk.rows() != u_prime.cols() || wk.cols() != u_prime.cols())
    throw ShapeError("task_attention: W^k must be d2 x d2");
  Matrix a = u_prime * wk;
  attention_softmax(a, axis);
  return u_prime.cwiseProduct(a);
}

double preference_predict(const Matrix& s, const RowVector& head_w, double head_b) {
  if (head_w.size() != s.size()) throw ShapeError("preference head width != d1*d2");
  double z = head_b;
  for (Index i = 0; i < s.size(); ++i) z += head_w[i] * s.data()[i];
  return sigmoid(z);
}

PreferenceLoss preference_loss(std::span<const double> predicted, std::span<const double> targets,
                               std::span<const std::uint8_t> usable) {
  if (predicted.size() != targets.size() || predicted.size() != usable.size())
    throw ShapeError("preference_loss: length mismatch");
  PreferenceLoss out;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!usable[i]) continue;
    const double d = targets[i] - predicted[i];
    out.value += d * d;
    ++out.used;
  }
  out.all_masked = out.used == 0;
  return out;
}

PreferenceNet::PreferenceNet(ParamStore& ps, const std::string& prefix, Index d1, Index d2,
                             std::size_t num_tasks, AttentionAxis axis)
    : d1_(d1), d2_(d2), axis_(axis) {
  wq = ps.add(prefix + ".wq", d1, d1);
  wk = ps.add(prefix + ".wk", d1, d1);
  wv = ps.add(prefix + ".wv", d1, d1);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    const std::string tp = prefix + ".task" + std::to_string(t);
    task_w_.push_back(ps.add(tp + ".attn", d2, d2));
    head_w_.push_back(ps.add(tp + ".head.w", 1, d1 * d2));
    head_b_.push_back(ps.add(tp + ".head.b", 1, 1));
  }
}

void PreferenceNet::init(ParamStore& ps, Rng& rng) const {
  const double b1 = 1.0 / std::sqrt(static_cast<double>(d1_));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(d2_));
  const double bh = 1.0 / std::sqrt(static_cast<double>(d1_ * d2_));
  for (auto id : {wq, wk, wv}) ps.init_uniform(id, b1, rng);
  for (std::size_t t = 0; t < task_w_.size(); ++t) {
    ps.init_uniform(task_w_[t], b2, rng);
    ps.init_uniform(head_w_[t], bh, rng);
    ps.init_uniform(head_b_[t], bh, rng);
  }
}

void PreferenceNet::forward(const ParamStore& ps, const Matrix& u, Cache& c) const {
  if (u.rows() != d1_ || u.cols() != d2_) throw ShapeError("preference input must be d1 x d2");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d1_));
  c.u = u;
  c.q = ps.value(wq) * u;
  c.k = ps.value(wk) * u;
  c.v = ps.value(wv) * u;
  c.attn = c.q * c.k.transpose() * scale;
  softmax_rows(c.attn);
  c.u_prime = c.attn * c.v;
  const std::size_t k = task_w_.size();
  c.task_attn.resize(k);
  c.s.resize(k);
  c.y.resize(k);
  for (std::size_t t = 0; t < k; ++t) {
    c.task_attn[t] = c.u_prime * ps.value(task_w_[t]);
    attention_softmax(c.task_attn[t], axis_);
    c.s[t] = c.u_prime.cwiseProduct(c.task_attn[t]);
    double z = ps.value(head_b_[t])(0, 0);
    const Matrix& hw = ps.value(head_w_[t]);
    for (Index i = 0; i < c.s[t].size(); ++i) z += hw.data()[i] * c.s[t].data()[i];
    c.y[t] = sigmoid(z);
  }
}

Matrix PreferenceNet::backward(const ParamStore& ps, const Cache& c, std::span<const double> dy,
                               Gradients& grad) const {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d1_));
  Matrix du_prime = Matrix::Zero(d1_, d2_);
  for (std::size_t t = 0; t < task_w_.size(); ++t) {
    if (dy[t] == 0.0) continue;
    const double dz = dy[t] * c.y[t] * (1.0 - c.y[t]);
    const Matrix& hw = ps.value(head_w_[t]);
    Matrix& ghw = grad.g[head_w_[t]];
    Matrix ds(d1_, d2_);
    for (Index i = 0; i < ds.size(); ++i) {
      ghw.data()[i] += dz * c.s[t].data()[i];
      ds.data()[i] = dz * hw.data()[i];
    }
    grad.g[head_b_[t]](0, 0) += dz;
    du_prime += ds.cwiseProduct(c.task_attn[t]);
    const Matrix da = ds.cwiseProduct(c.u_prime);
    const Matrix dlogit = attention_softmax_backward(c.task_attn[t], da, axis_);
    grad.g[task_w_[t]].noalias() += c.u_prime.transpose() * dlogit;
    du_prime.noalias() += dlogit * ps.value(task_w_[t]).transpose();
  }
  const Matrix dattn = du_prime * c.v.transpose();
  const Matrix dv = c.attn.transpose() * du_prime;
  const Matrix dscores = softmax_rows_backward(c.attn, dattn) * scale;
  const Matrix dq = dscores * c.k;
  const Matrix dk = dscores.transpose() * c.q;
  grad.g[wq].noalias() += dq * c.u.transpose();
  grad.g[wk].noalias() += dk * c.u.transpose();
  grad.g[wv].noalias() += dv * c.u.transpose();
  return ps.value(wq).transpose() * dq + ps.value(wk).transpose() * dk + ps.value(wv).transpose() * dv;
}

}  // namespace stan

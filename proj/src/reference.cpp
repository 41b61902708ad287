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

#include "stan/reference.hpp"

#include <algorithm>
#include <cmath>

#include "stan/error.hpp"

namespace stan::reference {

namespace {

using Vec = std::vector<double>;

Vec dense(const ParamStore& ps, const Dense& d, const Vec& in, bool relu) {
  const Matrix& w = ps.value(d.weight);
  const Matrix& b = ps.value(d.bias);
  Vec out(static_cast<std::size_t>(d.out));
  for (Index j = 0; j < d.out; ++j) {
    double z = b(0, j);
    for (Index i = 0; i < d.in; ++i) z += in[static_cast<std::size_t>(i)] * w(i, j);
    out[static_cast<std::size_t>(j)] = relu ? std::max(z, 0.0) : z;
  }
  return out;
}

Vec mlp(const ParamStore& ps, const Mlp& m, Vec x, bool relu_output) {
  const auto& layers = m.layers();
  for (std::size_t i = 0; i < layers.size(); ++i)
    x = dense(ps, layers[i], x, i + 1 < layers.size() || relu_output);
  return x;
}

Vec softmax(Vec z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

Vec gate(const ParamStore& ps, const Backbone::Gate& g, const Vec& in, const std::vector<Vec>& experts) {
  Vec w(g.visible.size(), 1.0);
  if (g.present) {
    const Matrix& wm = ps.value(g.weight);
    for (std::size_t j = 0; j < w.size(); ++j) {
      double z = 0.0;
      for (std::size_t i = 0; i < in.size(); ++i) z += in[i] * wm(static_cast<Index>(i), static_cast<Index>(j));
      w[j] = z;
    }
    w = softmax(w);
  }
  Vec out(experts[g.visible[0]].size(), 0.0);
  for (std::size_t j = 0; j < w.size(); ++j)
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += w[j] * experts[g.visible[j]][d];
  return out;
}

// Plain triple-loop helpers over row-major d1 x d2 matrices stored as Vec.
using Mat = std::vector<Vec>;

Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t l = 0; l < b.size(); ++l) c[i][j] += a[i][l] * b[l][j];
  return c;
}

Mat to_mat(const Matrix& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

Mat transpose(const Mat& a) {
  Mat t(a[0].size(), Vec(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

Vec preference(const Model& model, const InteractionRecord& r) {
  const ParamStore& ps = model.params();
  const PreferenceNet& pn = model.preference();
  const std::size_t d1 = static_cast<std::size_t>(pn.d1()), d2 = static_cast<std::size_t>(pn.d2());
  Mat u(d1, Vec(d2));
  for (std::size_t s = 0; s < d1; ++s)
    for (std::size_t j = 0; j < d2; ++j)
      u[s][j] = ps.value(model.preference_tables()[s])(r.user_features[s], static_cast<Index>(j));

  const Mat q = matmul(to_mat(ps.value(pn.wq)), u);
  const Mat k = matmul(to_mat(ps.value(pn.wk)), u);
  const Mat v = matmul(to_mat(ps.value(pn.wv)), u);
  Mat scores = matmul(q, transpose(k));
  for (auto& row : scores) {
    for (double& x : row) x /= std::sqrt(static_cast<double>(d1));
    row = softmax(row);
  }
  const Mat up = matmul(scores, v);

  Vec out;
  for (std::size_t t = 0; t < model.num_tasks(); ++t) {
    const std::string tp = "pref.task" + std::to_string(t);
    Mat a = matmul(up, to_mat(ps.value(ps.find(tp + ".attn"))));
    if (pn.axis() == AttentionAxis::kFeature) {
      a = transpose(a);
      for (auto& col : a) col = softmax(col);
      a = transpose(a);
    } else {
      for (auto& row : a) row = softmax(row);
    }
    const Matrix& hw = ps.value(ps.find(tp + ".head.w"));
    double z = ps.value(ps.find(tp + ".head.b"))(0, 0);
    for (std::size_t i = 0; i < d1; ++i)
      for (std::size_t j = 0; j < d2; ++j) z += hw(0, static_cast<Index>(i * d2 + j)) * up[i][j] * a[i][j];
    out.push_back(sigmoid(z));
  }
  return out;
}

}  // namespace

SampleOutput forward(const Model& model, const InteractionRecord& r, Stage stage) {
  const ParamStore& ps = model.params();
  Vec x;
  auto append = [&](ParamStore::Id table, std::uint32_t id) {
    const Matrix& t = ps.value(table);
    if (id >= t.rows()) throw LookupError("feature index out of vocab");
    for (Index j = 0; j < t.cols(); ++j) x.push_back(t(id, j));
  };
  for (std::size_t s = 0; s < r.user_features.size(); ++s) append(model.user_tables()[s], r.user_features[s]);
  if (auto st = model.stage_table()) append(*st, static_cast<std::uint32_t>(stage));
  for (std::size_t s = 0; s < r.item_features.size(); ++s) append(model.item_tables()[s], r.item_features[s]);

  const Backbone& bb = model.backbone();
  const std::size_t k = model.num_tasks();
  const int spec = bb.topology().specific;
  std::vector<Vec> inputs(k + 1, x);
  for (const auto& layer : bb.layers()) {
    std::vector<Vec> experts;
    for (std::size_t e = 0; e < layer.experts.size(); ++e) {
      const std::size_t owner = static_cast<int>(e) < static_cast<int>(k) * spec ? e / static_cast<std::size_t>(spec) : k;
      experts.push_back(mlp(ps, layer.experts[e], inputs[owner], true));
    }
    std::vector<Vec> next(k + 1);
    for (std::size_t t = 0; t < k; ++t) next[t] = gate(ps, layer.task_gates[t], inputs[t], experts);
    if (layer.has_shared_output) next[k] = gate(ps, layer.shared_gate, inputs[k], experts);
    inputs = std::move(next);
  }
  SampleOutput out;
  for (std::size_t t = 0; t < k; ++t) out.y_hat.push_back(sigmoid(mlp(ps, bb.towers()[t], inputs[t], false)[0]));
  if (model.has_preference()) out.y_pref = preference(model, r);
  return out;
}

LossParts batch_loss(const Model& model, const Batch& batch, const LossSpec& spec) {
  const std::size_t k = model.num_tasks();
  LossParts p;
  p.bce.assign(k, 0.0);
  p.weighted_bce.assign(k, 0.0);
  p.preference.assign(k, 0.0);
  for (std::size_t rec : batch.rows) {
    const auto& r = batch.ds->records[rec];
    const Stage stage = batch.user_stage ? (*batch.user_stage)[r.user] : Stage::kNew;
    const SampleOutput o = forward(model, r, stage);
    for (std::size_t t = 0; t < k; ++t) {
      double w = 1.0;
      if (spec.mode == WeightMode::kFixed && !spec.eta.empty()) w = spec.eta[t];
      if (spec.mode == WeightMode::kGamma) w = spec.gamma[static_cast<std::size_t>(r.user) * k + t];
      if (spec.mode == WeightMode::kPreference) w = o.y_pref[t];
      const double l = bce(o.y_hat[t], r.labels[t]);
      p.bce[t] += l;
      p.weighted_bce[t] += w * l;
    }
    if (spec.pseudo && model.has_preference() && spec.pseudo->usable(rec)) {
      ++p.preference_used;
      for (std::size_t t = 0; t < k; ++t) {
        const double d = spec.pseudo->at(rec, t) - o.y_pref[t];
        p.preference[t] += d * d;
      }
    }
    ++p.samples;
  }
  for (std::size_t t = 0; t < k; ++t) p.total += p.weighted_bce[t] + p.preference[t];
  return p;
}

}  // namespace stan::reference

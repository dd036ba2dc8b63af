#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "npfkgc/embeddings.hpp"
#include "npfkgc/kg.hpp"
#include "npfkgc/rng.hpp"
#include "npfkgc/tasks.hpp"

namespace npfkgc {

struct TransEOptions {
  std::size_t dim = 32;
  std::size_t epochs = 500;
  double margin = 1.0;
  double lr = 0.03;
  bool normalize = false;  // keep entity vectors on the unit sphere
};

inline void to_json(nlohmann::json& j, const TransEOptions& t) {
  j = {{"dim", t.dim}, {"epochs", t.epochs}, {"margin", t.margin}, {"lr", t.lr}, {"normalize", t.normalize}};
}

inline void from_json(const nlohmann::json& j, TransEOptions& t) {
  t.dim = j.value("dim", t.dim);
  t.epochs = j.value("epochs", t.epochs);
  t.margin = j.value("margin", t.margin);
  t.lr = j.value("lr", t.lr);
  t.normalize = j.value("normalize", t.normalize);
}

struct TransEResult {
  EmbeddingTable embeddings;
  // Margin loss on a fixed set of corrupted triples before and after training.
  double initial_loss = 0;
  double final_loss = 0;
};

inline double transe_distance(const EmbeddingTable& e, EntityId h, RelationId r, EntityId t) {
  const double* hv = e.entity.row(h);
  const double* rv = e.relation.row(r);
  const double* tv = e.entity.row(t);
  double s = 0;
  for (std::size_t j = 0; j < e.dim(); ++j) {
    const double d = hv[j] + rv[j] - tv[j];
    s += d * d;
  }
  return s;
}

inline double transe_loss(const EmbeddingTable& e, const Triple& t, EntityId corrupt, double margin) {
  return transe_distance(e, t.head, t.relation, t.tail) +
         std::max(0.0, margin - transe_distance(e, t.head, t.relation, corrupt));
}

// Projects a row onto the unit sphere.
inline void normalize_row(double* v, std::size_t dim) {
  double norm = 0;
  for (std::size_t j = 0; j < dim; ++j) norm += v[j] * v[j];
  norm = std::sqrt(norm);
  if (norm > 0)
    for (std::size_t j = 0; j < dim; ++j) v[j] /= norm;
}

// SGD on |h+r-t|^2 + max(0, margin - |h+r-t'|^2) with uniformly corrupted
// tails, optionally keeping entity vectors on the unit sphere. Only triples
// whose relation is not in `excluded` are used.
inline TransEResult pretrain_transe(const KnowledgeGraph& kg, const TransEOptions& opt, Rng& rng,
                                    const std::set<RelationId>& excluded = {}) {
  std::vector<Triple> data;
  for (const auto& t : kg.triples())
    if (!excluded.count(t.relation)) data.push_back(t);
  if (data.empty()) throw DataError("TransE pretraining needs at least one triple");

  TransEResult res;
  res.embeddings = init_embeddings(kg, opt.dim, rng);
  auto& e = res.embeddings;
  if (opt.normalize) {
    for (std::size_t i = 0; i < e.entity.rows; ++i) normalize_row(e.entity.row(i), opt.dim);
    for (std::size_t i = 0; i < e.relation.rows; ++i) normalize_row(e.relation.row(i), opt.dim);
  }

  std::vector<EntityId> probe_neg;
  for (const auto& t : data) probe_neg.push_back(sample_negative_tail(kg, t.head, t.relation, rng));
  auto probe_loss = [&] {
    double total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& t = data[i];
      total += transe_loss(e, t, probe_neg[i], opt.margin);
    }
    return total / static_cast<double>(data.size());
  };
  res.initial_loss = probe_loss();

  const std::size_t d = opt.dim;
  std::vector<double> pos(d), neg(d);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(data.begin(), data.end(), rng);
    for (const auto& t : data) {
      const EntityId corrupt = sample_negative_tail(kg, t.head, t.relation, rng);
      if (opt.lr == 0) continue;
      const bool push = transe_distance(e, t.head, t.relation, corrupt) < opt.margin;
      double* h = e.entity.row(t.head);
      double* r = e.relation.row(t.relation);
      double* tp = e.entity.row(t.tail);
      double* tn = e.entity.row(corrupt);
      for (std::size_t j = 0; j < d; ++j) {
        pos[j] = 2 * (h[j] + r[j] - tp[j]);
        neg[j] = push ? 2 * (h[j] + r[j] - tn[j]) : 0.0;
      }
      for (std::size_t j = 0; j < d; ++j) {
        h[j] -= opt.lr * (pos[j] - neg[j]);
        r[j] -= opt.lr * (pos[j] - neg[j]);
        tp[j] += opt.lr * pos[j];
        tn[j] -= opt.lr * neg[j];
      }
      if (opt.normalize)
        for (double* row : {h, tp, tn}) normalize_row(row, d);
    }
  }
  res.final_loss = probe_loss();
  return res;
}

}  // namespace npfkgc

#pragma once

// Stochastic ManifoldE decoder. The latent z_T is mapped to head/tail
// offsets and a radius D_z; a triple scores (|h' + r' - t'|^2 - D_z^2)^2,
// lower meaning closer to the manifold.

#include <algorithm>
#include <numeric>
#include <vector>

#include "npfkgc/kg.hpp"
#include "npfkgc/nn.hpp"
#include "npfkgc/ops.hpp"
#include "npfkgc/rng.hpp"

namespace npfkgc {

// |h + r - t|^2
inline Tensor manifold_fn(const Tensor& h, const Tensor& r, const Tensor& t) {
  if (h.shape() != r.shape() || h.shape() != t.shape()) {
    throw DimensionError("manifold function needs equal shapes: " + shape_string(h.shape()) + ", " +
                         shape_string(r.shape()) + ", " + shape_string(t.shape()));
  }
  return sum(square(h + r - t));
}

struct LatentProjection {
  Tensor head;    // [d]
  Tensor tail;    // [d]
  Tensor radius;  // [1]
};

struct ManifoldDecoder {
  Mlp head;
  Mlp tail;
  Mlp radius;

  ManifoldDecoder() = default;
  ManifoldDecoder(ParameterStore& store, std::size_t latent_dim, std::size_t entity_dim, Rng& rng)
      : head(store, "dec.head", {latent_dim, latent_dim, entity_dim}, rng),
        tail(store, "dec.tail", {latent_dim, latent_dim, entity_dim}, rng),
        radius(store, "dec.radius", {latent_dim, latent_dim, 1}, rng) {}

  LatentProjection project(const Tensor& z) const { return {head(z), tail(z), radius(z)}; }
};

inline LatentProjection project_latent(const ManifoldDecoder& dec, const Tensor& z) { return dec.project(z); }

// (M(h_q + z_head, r', t_q + z_tail) - D_z^2)^2
inline Tensor score(const LatentProjection& p, const Tensor& head, const Tensor& relation, const Tensor& tail) {
  return square(manifold_fn(head + p.head, relation, tail + p.tail) - square(p.radius));
}

// Scores for aligned rows of heads and tails ([n, d] each) -> [n].
inline Tensor score_rows(const LatentProjection& p, const Tensor& heads, const Tensor& relation,
                         const Tensor& tails) {
  if (heads.shape() != tails.shape() || heads.rank() != 2) throw DimensionError("score_rows needs matching [n, d] inputs");
  Tensor diff = add_rows(heads - tails, p.head + relation - p.tail);
  return square(sum(square(diff), 1) - square(p.radius));
}

struct RankedCandidate {
  EntityId entity;
  double score;
};

// Candidates ordered by ascending score, ties by entity index. Never records
// on the tape.
inline std::vector<RankedCandidate> rank_candidates(const LatentProjection& p, const Tensor& head,
                                                    const Tensor& relation, const std::vector<EntityId>& candidates,
                                                    const Tensor& candidate_rows) {
  if (candidates.empty()) throw std::invalid_argument("rank_candidates needs at least one candidate");
  if (candidate_rows.rank() != 2 || candidate_rows.shape()[0] != candidates.size())
    throw DimensionError("candidate rows do not match candidate list");
  TapeScope no_grad(nullptr);
  const std::size_t d = head.size();
  const auto& h = head.values();
  const auto& r = relation.values();
  const auto& zh = p.head.values();
  const auto& zt = p.tail.values();
  const auto& rows = candidate_rows.values();
  const double radius_sq = p.radius.item() * p.radius.item();
  std::vector<double> anchor(d);
  for (std::size_t j = 0; j < d; ++j) anchor[j] = (h[j] + zh[j]) + r[j];
  std::vector<RankedCandidate> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double m = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = anchor[j] - (rows[i * d + j] + zt[j]);
      m += diff * diff;
    }
    const double s = m - radius_sq;
    out[i] = {candidates[i], s * s};
  }
  std::sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    return a.score != b.score ? a.score < b.score : a.entity < b.entity;
  });
  return out;
}

}  // namespace npfkgc

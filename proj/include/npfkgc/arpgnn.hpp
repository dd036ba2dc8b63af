#pragma once

// Attentive relation-path GNN. Each layer sends one message per outgoing
// edge (v, r, u), m = W_r (e_v || e_r || e_u), weighs messages with a
// softmax over LeakyReLU(w_att . (e_v || m)) and updates
// e_v <- ReLU(W e_v + sum_i a_i m_i + B). Relation vectors are the initial
// relation embeddings at every layer.

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "npfkgc/kg.hpp"
#include "npfkgc/nn.hpp"
#include "npfkgc/ops.hpp"
#include "npfkgc/rng.hpp"

namespace npfkgc {

inline constexpr std::size_t kDefaultNeighborCap = 64;

// Adjacency with every list capped at `cap` edges by seeded uniform
// subsampling (original order kept). cap == 0 disables the cap.
inline Adjacency cap_neighbors(const Adjacency& adj, std::size_t cap, Rng& rng) {
  Adjacency out(adj.size());
  for (std::size_t v = 0; v < adj.size(); ++v) {
    if (cap == 0 || adj[v].size() <= cap) {
      out[v] = adj[v];
      continue;
    }
    std::vector<std::size_t> idx(adj[v].size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out[v].push_back(adj[v][i]);
  }
  return out;
}

struct ArpGnnLayer {
  std::vector<Tensor> relation_weights;  // per relation: [d, 3d]
  Tensor self_weight;                    // [d, d]
  Tensor bias;                           // [d]
  Tensor attention;                      // [2d]
  double leaky_slope = kDefaultLeakySlope;

  ArpGnnLayer() = default;
  ArpGnnLayer(ParameterStore& store, const std::string& name, std::size_t num_relations, std::size_t dim,
              Rng& rng) {
    for (std::size_t r = 0; r < num_relations; ++r)
      relation_weights.push_back(store.add(name + ".rel." + std::to_string(r), xavier(dim, 3 * dim, rng)));
    self_weight = store.add(name + ".self", xavier(dim, dim, rng));
    bias = store.add(name + ".bias", Tensor::zeros({dim}));
    attention = store.add(name + ".attn", uniform_tensor({2 * dim}, std::sqrt(6.0 / (2.0 * dim + 1)), rng));
  }

  std::size_t dim() const { return self_weight.shape()[0]; }
};

// m = W_r (e_v || e_r || e_u)
inline Tensor relation_message(const ArpGnnLayer& layer, RelationId r, const Tensor& e_v, const Tensor& e_r,
                               const Tensor& e_u) {
  if (r >= layer.relation_weights.size()) {
    throw std::out_of_range("relation index " + std::to_string(r) + " has no transform in this layer");
  }
  return matmul(layer.relation_weights[r], concat({e_v, e_r, e_u}));
}

inline Tensor attention_weights(const ArpGnnLayer& layer, const Tensor& e_v, const std::vector<Tensor>& messages) {
  if (messages.empty()) throw DimensionError("attention over zero messages");
  std::vector<Tensor> scores;
  for (const auto& m : messages)
    scores.push_back(leaky_relu(dot(layer.attention, concat({e_v, m})), layer.leaky_slope));
  return softmax(concat(scores));
}

// Representations for a subset of entities: rows[slot[e]] belongs to entity e.
struct EntityReps {
  Tensor rows;
  std::vector<std::ptrdiff_t> slot;  // -1 when the entity is not present
  std::vector<EntityId> entities;    // row order

  bool has(EntityId e) const { return e < slot.size() && slot[e] >= 0; }
  std::size_t index(EntityId e) const {
    if (!has(e)) throw std::out_of_range("entity " + std::to_string(e) + " not encoded");
    return static_cast<std::size_t>(slot[e]);
  }
  Tensor get(EntityId e) const { return row(rows, index(e)); }
  std::size_t dim() const { return rows.shape()[1]; }

  std::vector<std::size_t> indices(const std::vector<EntityId>& es) const {
    std::vector<std::size_t> out;
    out.reserve(es.size());
    for (auto e : es) out.push_back(index(e));
    return out;
  }
};

inline EntityReps initial_reps(const Tensor& entity_table, const std::vector<EntityId>& entities) {
  EntityReps reps;
  const std::size_t n = entity_table.shape()[0];
  reps.slot.assign(n, -1);
  reps.entities = entities;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    reps.slot[entities[i]] = static_cast<std::ptrdiff_t>(i);
    idx.push_back(entities[i]);
  }
  reps.rows = gather_rows(entity_table, idx);
  return reps;
}

// One layer for `targets`; `prev` must hold every target and all of its
// neighbors.
inline EntityReps layer_forward(const ArpGnnLayer& layer, const Adjacency& adj, const EntityReps& prev,
                                const Tensor& relation_table, const std::vector<EntityId>& targets) {
  struct EdgeRef {
    std::size_t segment;
    std::size_t src;
    RelationId relation;
    std::size_t dst;
  };
  std::map<RelationId, std::vector<EdgeRef>> groups;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const EntityId v = targets[i];
    for (const auto& e : adj[v]) groups[e.relation].push_back({i, prev.index(v), e.relation, prev.index(e.neighbor)});
  }

  const std::vector<std::size_t> self_idx = prev.indices(targets);
  Tensor pre = linear(gather_rows(prev.rows, self_idx), layer.self_weight, layer.bias);

  if (!groups.empty()) {
    std::vector<Tensor> messages;
    std::vector<std::size_t> segment, src;
    for (const auto& [r, edges] : groups) {
      std::vector<std::size_t> s, rel, d;
      for (const auto& e : edges) {
        s.push_back(e.src);
        rel.push_back(e.relation);
        d.push_back(e.dst);
        segment.push_back(e.segment);
        src.push_back(e.src);
      }
      Tensor x = concat({gather_rows(prev.rows, s), gather_rows(relation_table, rel), gather_rows(prev.rows, d)}, 1);
      messages.push_back(linear(x, layer.relation_weights.at(r)));
    }
    Tensor m = messages.size() == 1 ? messages[0] : concat(messages, 0);
    Tensor scores = leaky_relu(matmul(concat({gather_rows(prev.rows, src), m}, 1), layer.attention), layer.leaky_slope);
    Tensor a = segment_softmax(scores, segment, targets.size());
    pre = pre + segment_weighted_sum(m, a, segment, targets.size());
  }

  EntityReps out;
  out.rows = relu(pre);
  out.entities = targets;
  out.slot.assign(prev.slot.size(), -1);
  for (std::size_t i = 0; i < targets.size(); ++i) out.slot[targets[i]] = static_cast<std::ptrdiff_t>(i);
  return out;
}

struct ArpGnn {
  std::vector<ArpGnnLayer> layers;

  ArpGnn() = default;
  ArpGnn(ParameterStore& store, std::size_t num_layers, std::size_t num_relations, std::size_t dim, Rng& rng) {
    for (std::size_t l = 0; l < num_layers; ++l)
      layers.emplace_back(store, "gnn.layer" + std::to_string(l), num_relations, dim, rng);
  }
};

// Receptive fields: field[L] = targets, field[l-1] = field[l] plus neighbors.
inline std::vector<std::vector<EntityId>> receptive_fields(const Adjacency& adj, const std::vector<EntityId>& targets,
                                                           std::size_t num_layers) {
  std::vector<std::vector<EntityId>> fields(num_layers + 1);
  std::vector<char> in(adj.size(), 0);
  std::vector<EntityId> current;
  for (auto e : targets)
    if (!in[e]) in[e] = 1, current.push_back(e);
  std::sort(current.begin(), current.end());
  fields[num_layers] = current;
  for (std::size_t l = num_layers; l-- > 0;) {
    std::vector<EntityId> next = current;
    for (auto v : current)
      for (const auto& e : adj[v])
        if (!in[e.neighbor]) in[e.neighbor] = 1, next.push_back(e.neighbor);
    std::sort(next.begin(), next.end());
    fields[l] = current = next;
  }
  return fields;
}

// Stacks the layers for `targets`, evaluating only their L-hop receptive
// field. With zero layers this returns the initial embeddings.
inline EntityReps encode_entities(const ArpGnn& gnn, const Adjacency& adj, const Tensor& entity_table,
                                  const Tensor& relation_table, const std::vector<EntityId>& targets) {
  const auto fields = receptive_fields(adj, targets, gnn.layers.size());
  EntityReps reps = initial_reps(entity_table, fields[0]);
  for (std::size_t l = 0; l < gnn.layers.size(); ++l)
    reps = layer_forward(gnn.layers[l], adj, reps, relation_table, fields[l + 1]);
  return reps;
}

inline std::vector<EntityId> all_entities(std::size_t n) {
  std::vector<EntityId> out(n);
  std::iota(out.begin(), out.end(), EntityId{0});
  return out;
}

// s = h' || t'
inline Tensor triple_representation(const EntityReps& reps, EntityId head, EntityId tail) {
  return concat({reps.get(head), reps.get(tail)});
}

}  // namespace npfkgc

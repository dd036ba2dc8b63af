#pragma once

// Full NP-FKGC network: trainable embeddings, ARP-GNN over the background
// graph, Bi-LSTM relation encoder, NP latent encoder with a flow chain and
// the stochastic ManifoldE decoder.

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npfkgc/arpgnn.hpp"
#include "npfkgc/decoder.hpp"
#include "npfkgc/embeddings.hpp"
#include "npfkgc/kg.hpp"
#include "npfkgc/npflow.hpp"
#include "npfkgc/relenc.hpp"
#include "npfkgc/tasks.hpp"

namespace npfkgc {

struct ModelConfig {
  std::size_t dim = 100;         // d
  std::size_t latent_dim = 100;  // d_z
  std::size_t gnn_layers = 2;    // L
  FlowKind flow = FlowKind::planar;
  std::size_t flow_steps = 10;   // T
  std::size_t lstm_hidden = 700; // H
  std::size_t lstm_layers = 2;
  std::size_t neighbor_cap = kDefaultNeighborCap;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"dim", c.dim},
       {"latent_dim", c.latent_dim},
       {"gnn_layers", c.gnn_layers},
       {"flow", to_string(c.flow)},
       {"flow_steps", c.flow_steps},
       {"lstm_hidden", c.lstm_hidden},
       {"lstm_layers", c.lstm_layers},
       {"neighbor_cap", c.neighbor_cap}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.dim = j.value("dim", c.dim);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.gnn_layers = j.value("gnn_layers", c.gnn_layers);
  c.flow = flow_kind_from_string(j.value("flow", std::string(to_string(c.flow))));
  c.flow_steps = j.value("flow_steps", c.flow_steps);
  c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  c.neighbor_cap = j.value("neighbor_cap", c.neighbor_cap);
}

// Per-task call counts. `context` counts rows through the NP context encoder
// for the prior, `query` counts scored query triples, `posterior` counts the
// extra target rows encoded for the training posterior.
struct InvocationCounter {
  std::size_t context = 0;
  std::size_t query = 0;
  std::size_t posterior = 0;

  std::size_t total() const { return context + query; }
};

// Representations shared by one task's forward pass.
struct TaskEncoding {
  RelationSummary relation;
  Tensor context_rows;  // [(n+1)K, 2d+1]
  GaussianParams prior;
};

class NpFkgcModel {
 public:
  ModelConfig config;
  ParameterStore params;
  Tensor entity_table;    // [|E|, d]
  Tensor relation_table;  // [|R|, d]
  Adjacency background;
  ArpGnn gnn;
  RelationEncoder relenc;
  NpEncoder npenc;
  FlowChain flow;
  ManifoldDecoder decoder;
  mutable InvocationCounter counter;

  NpFkgcModel() = default;

  // `background` is the adjacency the GNN reads (already capped).
  NpFkgcModel(const ModelConfig& cfg, const EmbeddingTable& init, Adjacency background_adj, Rng& rng)
      : config(cfg), background(std::move(background_adj)) {
    if (cfg.dim == 0 || cfg.latent_dim == 0 || cfg.lstm_hidden == 0 || cfg.lstm_layers == 0)
      throw std::invalid_argument("model dimensions must be positive");
    if (init.dim() != cfg.dim) {
      throw std::invalid_argument("embedding dimension " + std::to_string(init.dim()) + " does not match dim " +
                                  std::to_string(cfg.dim));
    }
    entity_table = params.add("emb.entity", Tensor({init.entity.rows, cfg.dim}, init.entity.values));
    relation_table = params.add("emb.relation", Tensor({init.relation.rows, cfg.dim}, init.relation.values));
    gnn = ArpGnn(params, cfg.gnn_layers, init.relation.rows, cfg.dim, rng);
    relenc = RelationEncoder(params, cfg.dim, cfg.lstm_hidden, cfg.lstm_layers, rng);
    npenc = NpEncoder(params, cfg.dim, cfg.latent_dim, rng);
    flow = FlowChain(params, cfg.flow, cfg.flow_steps, cfg.latent_dim, rng);
    decoder = ManifoldDecoder(params, cfg.latent_dim, cfg.dim, rng);
  }

  NpFkgcModel(const NpFkgcModel&) = delete;
  NpFkgcModel& operator=(const NpFkgcModel&) = delete;

  std::size_t num_entities() const { return entity_table.shape()[0]; }

  bool is_embedding(const std::string& name) const { return name == "emb.entity" || name == "emb.relation"; }

  EntityReps encode(const std::vector<EntityId>& targets) const {
    return encode_entities(gnn, background, entity_table, relation_table, targets);
  }

  EntityReps encode_all() const { return encode(all_entities(num_entities())); }

  // Rows h' || t' || y for context triples.
  static Tensor context_rows(const EntityReps& reps, const std::vector<ContextTriple>& context) {
    std::vector<std::size_t> heads, tails;
    std::vector<double> labels;
    for (const auto& c : context) {
      heads.push_back(reps.index(c.head));
      tails.push_back(reps.index(c.tail));
      labels.push_back(static_cast<double>(c.label));
    }
    return concat({gather_rows(reps.rows, heads), gather_rows(reps.rows, tails),
                   Tensor({labels.size(), 1}, labels)},
                  1);
  }

  RelationSummary summarize_support(const EntityReps& reps, const FewShotTask& task) const {
    std::vector<Tensor> support;
    for (const auto& p : task.support()) support.push_back(triple_representation(reps, p.head, p.tail));
    return relenc(support);
  }

  TaskEncoding encode_task(const EntityReps& reps, const FewShotTask& task) const {
    TaskEncoding enc;
    enc.relation = summarize_support(reps, task);
    enc.context_rows = context_rows(reps, task.context);
    counter.context += task.context.size();
    enc.prior = npenc.base_distribution(npenc.encode_context(enc.context_rows));
    return enc;
  }

  // Base parameters given context and labelled targets.
  GaussianParams posterior(const EntityReps& reps, const TaskEncoding& enc, const FewShotTask& task) const {
    std::vector<ContextTriple> targets;
    for (const auto& p : task.target_pos) targets.push_back({p.head, p.tail, 1});
    for (const auto& p : task.target_neg) targets.push_back({p.head, p.tail, 0});
    counter.posterior += targets.size();
    Tensor rows = concat({enc.context_rows, context_rows(reps, targets)}, 0);
    return npenc.base_distribution(npenc.encode_context(rows));
  }

  // Entities whose representations a task touches.
  static void collect_entities(const FewShotTask& task, std::set<EntityId>& out) {
    for (const auto& c : task.context) out.insert(c.head), out.insert(c.tail);
    for (const auto& p : task.target_pos) out.insert(p.head), out.insert(p.tail);
    for (const auto& p : task.target_neg) out.insert(p.head), out.insert(p.tail);
  }

  // Scores of query pairs under one latent projection.
  Tensor score_pairs(const EntityReps& reps, const LatentProjection& proj, const Tensor& relation,
                     const std::vector<EntityPair>& pairs) const {
    std::vector<std::size_t> heads, tails;
    for (const auto& p : pairs) heads.push_back(reps.index(p.head)), tails.push_back(reps.index(p.tail));
    counter.query += pairs.size();
    return score_rows(proj, gather_rows(reps.rows, heads), relation, gather_rows(reps.rows, tails));
  }
};

// Background graph for the GNN: every triple whose relation is not a
// few-shot relation of the split, with neighbor lists capped.
inline Adjacency background_adjacency(const KnowledgeGraph& kg, const TaskSplit& split, std::size_t cap,
                                      std::uint64_t seed) {
  Rng rng = make_stream(seed, Stream::neighbors);
  return cap_neighbors(kg.adjacency_excluding(split.all()), cap, rng);
}

}  // namespace npfkgc

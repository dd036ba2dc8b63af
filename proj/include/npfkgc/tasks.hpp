#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npfkgc/kg.hpp"
#include "npfkgc/rng.hpp"

namespace npfkgc {

struct ContextTriple {
  EntityId head;
  EntityId tail;
  int label;  // 1 = observed support triple, 0 = corrupted tail

  friend bool operator==(const ContextTriple&, const ContextTriple&) = default;
};

struct EntityPair {
  EntityId head;
  EntityId tail;

  friend bool operator==(const EntityPair&, const EntityPair&) = default;
};

// One relation's episode. Context holds the K support triples (label 1)
// followed by n*K corrupted ones (label 0); negatives for support triple i
// occupy context[K + i*n .. K + (i+1)*n). target_neg holds
// negatives_per_query entries per target_pos entry in the same layout.
struct FewShotTask {
  RelationId relation = 0;
  std::size_t k = 0;
  std::size_t negatives_per_support = 0;
  std::size_t negatives_per_query = 0;
  std::vector<ContextTriple> context;
  std::vector<EntityPair> target_pos;
  std::vector<EntityPair> target_neg;

  std::vector<EntityPair> support() const {
    std::vector<EntityPair> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({context[i].head, context[i].tail});
    return out;
  }

  friend bool operator==(const FewShotTask&, const FewShotTask&) = default;
};

struct TaskOptions {
  std::size_t k = 5;
  std::size_t negatives_per_support = 1;  // n
  std::size_t negatives_per_query = 1;
  // 0 keeps every query; otherwise a uniform random subset of this size.
  std::size_t max_queries = 0;
  // Draw the support uniformly from the relation's triples instead of
  // taking the first K in file order.
  bool random_support = false;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

// Uniform tail for `head` such that (head, relation, tail) is not a known triple.
inline EntityId sample_negative_tail(const KnowledgeGraph& kg, EntityId head, RelationId relation,
                                     Rng& rng) {
  const std::size_t n = kg.num_entities();
  if (kg.tail_count(head, relation) >= n) {
    throw InsufficientDataError("no corrupt tail available for head " + kg.entities().name(head));
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  while (true) {
    const EntityId t = pick(rng);
    if (!kg.contains({head, relation, t})) return t;
  }
}

inline FewShotTask build_task(const KnowledgeGraph& kg, RelationId relation, const TaskOptions& opt,
                              Rng& rng) {
  if (opt.k == 0) throw std::invalid_argument("support size K must be positive");
  if (opt.negatives_per_support == 0) throw std::invalid_argument("negative sampling size n must be >= 1");
  std::vector<Triple> triples = kg.relation_triples(relation);
  if (triples.size() <= opt.k) {
    throw InsufficientDataError("relation " + kg.relations().name(relation) + " has " +
                                std::to_string(triples.size()) + " triples, needs more than K=" +
                                std::to_string(opt.k));
  }
  if (opt.random_support) std::shuffle(triples.begin(), triples.end(), rng);

  FewShotTask task;
  task.relation = relation;
  task.k = opt.k;
  task.negatives_per_support = opt.negatives_per_support;
  task.negatives_per_query = opt.negatives_per_query;
  for (std::size_t i = 0; i < opt.k; ++i) task.context.push_back({triples[i].head, triples[i].tail, 1});
  for (std::size_t i = 0; i < opt.k; ++i)
    for (std::size_t j = 0; j < opt.negatives_per_support; ++j)
      task.context.push_back({triples[i].head, sample_negative_tail(kg, triples[i].head, relation, rng), 0});

  std::vector<Triple> queries(triples.begin() + static_cast<std::ptrdiff_t>(opt.k), triples.end());
  if (opt.max_queries && queries.size() > opt.max_queries) {
    std::shuffle(queries.begin(), queries.end(), rng);
    queries.resize(opt.max_queries);
  }
  for (const auto& q : queries) {
    task.target_pos.push_back({q.head, q.tail});
    for (std::size_t j = 0; j < opt.negatives_per_query; ++j)
      task.target_neg.push_back({q.head, sample_negative_tail(kg, q.head, relation, rng)});
  }
  return task;
}

struct TaskSplit {
  std::vector<RelationId> train;
  std::vector<RelationId> valid;
  std::vector<RelationId> test;

  std::set<RelationId> held_out() const {
    std::set<RelationId> out(valid.begin(), valid.end());
    out.insert(test.begin(), test.end());
    return out;
  }

  std::set<RelationId> all() const {
    std::set<RelationId> out = held_out();
    out.insert(train.begin(), train.end());
    return out;
  }
};

inline void check_disjoint(const TaskSplit& split, const KnowledgeGraph& kg) {
  std::set<RelationId> seen;
  for (const auto* part : {&split.train, &split.valid, &split.test})
    for (RelationId r : *part)
      if (!seen.insert(r).second)
        throw DataError("relation " + kg.relations().name(r) + " appears in more than one split");
}

inline TaskSplit split_from_json(const nlohmann::json& j, const KnowledgeGraph& kg) {
  TaskSplit split;
  auto read = [&](const char* key, std::vector<RelationId>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_array()) throw ParseError(std::string("split field '") + key + "' must be an array");
    for (const auto& name : j[key]) {
      const auto s = name.get<std::string>();
      if (!kg.relations().contains(s)) throw DataError("split names unknown relation: " + s);
      out.push_back(kg.relations().at(s));
    }
  };
  read("train", split.train);
  read("valid", split.valid);
  read("test", split.test);
  check_disjoint(split, kg);
  return split;
}

inline nlohmann::json split_to_json(const TaskSplit& split, const KnowledgeGraph& kg) {
  auto names = [&](const std::vector<RelationId>& ids) {
    nlohmann::json a = nlohmann::json::array();
    for (auto r : ids) a.push_back(kg.relations().name(r));
    return a;
  };
  return {{"train", names(split.train)}, {"valid", names(split.valid)}, {"test", names(split.test)}};
}

inline TaskSplit load_split(const std::string& path, const KnowledgeGraph& kg) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return split_from_json(j, kg);
}

// Relations sampled during training: the split's train relations plus, when
// `enrich` is set, every other relation outside valid/test with more than
// K+1 triples.
inline std::vector<RelationId> training_relations(const KnowledgeGraph& kg, const TaskSplit& split,
                                                  std::size_t k, bool enrich) {
  std::vector<RelationId> out;
  for (RelationId r : split.train)
    if (kg.relation_triples(r).size() > k) out.push_back(r);
  if (enrich) {
    const auto excluded = split.all();
    for (RelationId r = 0; r < kg.num_relations(); ++r)
      if (!excluded.count(r) && kg.relation_triples(r).size() > k + 1) out.push_back(r);
  }
  return out;
}

}  // namespace npfkgc

#pragma once

// Synthetic compositional few-shot graphs. Entities sit on a grid of width
// ceil(sqrt(N)); background relation p moves one row down and q one column
// right. Few-shot relations are length-2 compositions of p and q (q.p, p.p,
// q.q), so every tail is two hops from its head in the background graph.
// A one-to-many relation of arity a is the union of a distinct compositions.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npfkgc/embeddings.hpp"
#include "npfkgc/kg.hpp"
#include "npfkgc/rng.hpp"
#include "npfkgc/tasks.hpp"
#include "npfkgc/transe.hpp"

namespace npfkgc {

struct SynthOptions {
  std::size_t entities = 100;
  std::size_t train = 8;
  std::size_t valid = 2;
  std::size_t test = 4;
  std::size_t heads_per_relation = 20;
  std::size_t arity = 3;              // tails per head of one-to-many relations
  double one_to_many_fraction = 0.0;  // share of few-shot relations per split part
  std::uint64_t seed = 1;
  TransEOptions transe{};
};

inline void to_json(nlohmann::json& j, const SynthOptions& s) {
  j = {{"entities", s.entities},
       {"train", s.train},
       {"valid", s.valid},
       {"test", s.test},
       {"heads_per_relation", s.heads_per_relation},
       {"arity", s.arity},
       {"one_to_many_fraction", s.one_to_many_fraction},
       {"seed", s.seed},
       {"transe", s.transe}};
}

inline void from_json(const nlohmann::json& j, SynthOptions& s) {
  s.entities = j.value("entities", s.entities);
  s.train = j.value("train", s.train);
  s.valid = j.value("valid", s.valid);
  s.test = j.value("test", s.test);
  s.heads_per_relation = j.value("heads_per_relation", s.heads_per_relation);
  s.arity = j.value("arity", s.arity);
  s.one_to_many_fraction = j.value("one_to_many_fraction", s.one_to_many_fraction);
  s.seed = j.value("seed", s.seed);
  if (j.contains("transe")) s.transe = j.at("transe").get<TransEOptions>();
}

struct SynthData {
  KnowledgeGraph kg;
  TaskSplit split;
  EmbeddingTable embeddings;
  std::vector<RelationId> one_to_many;
};

// Grid offsets (rows, cols) of the length-2 compositions, in the order
// relations cycle through them.
inline constexpr std::array<std::array<std::size_t, 2>, 3> kCompositions{{{1, 1}, {2, 0}, {0, 2}}};
inline constexpr const char* kCompositionNames[] = {"q.p", "p.p", "q.q"};

inline std::size_t grid_width(std::size_t entities) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(entities))));
}

// Heads from which every listed composition lands inside the grid.
inline std::vector<std::size_t> eligible_heads(std::size_t entities, const std::vector<std::size_t>& comps) {
  const std::size_t w = grid_width(entities);
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < entities; ++e) {
    bool ok = true;
    for (auto c : comps) {
      const std::size_t row = e / w + kCompositions[c][0];
      const std::size_t col = e % w + kCompositions[c][1];
      if (col >= w || row * w + col >= entities) ok = false;
    }
    if (ok) out.push_back(e);
  }
  return out;
}

inline std::vector<std::size_t> relation_compositions(std::size_t index, bool one_to_many, std::size_t arity) {
  std::vector<std::size_t> comps;
  const std::size_t count = one_to_many ? arity : 1;
  for (std::size_t j = 0; j < count; ++j) comps.push_back((index + j) % kCompositions.size());
  return comps;
}

inline void check_feasible(const SynthOptions& o) {
  std::vector<std::string> errors;
  if (o.entities < 9) errors.push_back("entities must be at least 9");
  if (o.train + o.valid + o.test == 0) errors.push_back("at least one few-shot relation is required");
  if (o.heads_per_relation == 0) errors.push_back("heads_per_relation must be positive");
  if (o.arity == 0 || o.arity > kCompositions.size())
    errors.push_back("arity must be between 1 and " + std::to_string(kCompositions.size()));
  if (o.one_to_many_fraction < 0 || o.one_to_many_fraction > 1) errors.push_back("one_to_many_fraction must be in [0, 1]");
  if (errors.empty()) {
    // Relations cycle through the compositions, so the smallest pool over
    // one cycle bounds every relation.
    const bool multi = o.one_to_many_fraction > 0 && o.arity > 1;
    std::size_t pool = o.entities;
    for (std::size_t j = 0; j < kCompositions.size(); ++j) {
      pool = std::min(pool, eligible_heads(o.entities, relation_compositions(j, false, o.arity)).size());
      if (multi) pool = std::min(pool, eligible_heads(o.entities, relation_compositions(j, true, o.arity)).size());
    }
    if (o.heads_per_relation > pool)
      errors.push_back("heads_per_relation " + std::to_string(o.heads_per_relation) + " exceeds the " +
                       std::to_string(pool) + " eligible heads");
  }
  if (!errors.empty()) {
    std::string msg = "infeasible synthetic configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
}

inline SynthData generate_synthetic(const SynthOptions& o) {
  check_feasible(o);
  Rng rng = make_stream(o.seed, Stream::synth);
  const std::size_t n = o.entities;
  const std::size_t w = grid_width(n);
  const bool multi = o.one_to_many_fraction > 0 && o.arity > 1;
  auto ename = [](std::size_t e) { return "e" + std::to_string(e); };

  SynthData out;
  for (std::size_t e = 0; e < n; ++e) {
    if (e + w < n) out.kg.add(ename(e), "p", ename(e + w));
    if (e % w + 1 < w && e + 1 < n) out.kg.add(ename(e), "q", ename(e + 1));
  }

  struct Part {
    const char* name;
    std::size_t count;
    std::vector<RelationId>* ids;
  };
  const Part parts[] = {{"train", o.train, &out.split.train},
                        {"valid", o.valid, &out.split.valid},
                        {"test", o.test, &out.split.test}};
  std::size_t index = 0;
  for (const auto& part : parts) {
    const auto many = static_cast<std::size_t>(std::lround(static_cast<double>(part.count) * o.one_to_many_fraction));
    for (std::size_t i = 0; i < part.count; ++i, ++index) {
      const bool one_to_many = multi && i < many;
      const auto comps = relation_compositions(index, one_to_many, o.arity);
      std::vector<std::size_t> pool = eligible_heads(n, comps);
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(o.heads_per_relation);
      const std::string rname = std::string("fs_") + part.name + std::to_string(i);
      for (auto h : pool)
        for (auto c : comps) out.kg.add(ename(h), rname, ename(h + kCompositions[c][0] * w + kCompositions[c][1]));
      const RelationId r = out.kg.relations().at(rname);
      part.ids->push_back(r);
      if (one_to_many) out.one_to_many.push_back(r);
    }
  }

  Rng transe_rng = make_stream(o.seed, Stream::transe);
  out.embeddings = pretrain_transe(out.kg, o.transe, transe_rng, out.split.all()).embeddings;
  return out;
}

struct SynthPaths {
  std::string triples;
  std::string split;
  std::string entity_embeddings;
  std::string relation_embeddings;
};

inline SynthPaths synth_paths(const std::string& dir) {
  namespace fs = std::filesystem;
  return {(fs::path(dir) / "triples.tsv").string(), (fs::path(dir) / "split.json").string(),
          (fs::path(dir) / "entity2vec.txt").string(), (fs::path(dir) / "relation2vec.txt").string()};
}

inline SynthPaths write_synthetic(const SynthData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const SynthPaths paths = synth_paths(dir);
  save_triples(data.kg, paths.triples);
  std::ofstream split(paths.split);
  if (!split) throw DataError("cannot write split file: " + paths.split);
  split << split_to_json(data.split, data.kg).dump(2) << '\n';
  save_embeddings(data.embeddings, data.kg, paths.entity_embeddings, paths.relation_embeddings);
  return paths;
}

}  // namespace npfkgc

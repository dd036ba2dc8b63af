#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace npfkgc {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EntityId = std::size_t;
using RelationId = std::size_t;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Edge {
  RelationId relation;
  EntityId neighbor;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Insertion-ordered string <-> index map.
class Vocabulary {
 public:
  std::size_t intern(const std::string& name) {
    auto [it, inserted] = index_.try_emplace(name, names_.size());
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown name: " + name);
    return it->second;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-entity outgoing (relation, neighbor) lists.
using Adjacency = std::vector<std::vector<Edge>>;

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  // Adds a triple by name; returns false (and counts a duplicate) when the
  // triple is already present.
  bool add(const std::string& head, const std::string& relation, const std::string& tail) {
    const EntityId h = entities_.intern(head);
    const RelationId r = relations_.intern(relation);
    const EntityId t = entities_.intern(tail);
    return add(Triple{h, r, t});
  }

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  const std::vector<Triple>& triples() const { return triples_; }
  std::size_t duplicates_dropped() const { return duplicates_; }

  // Triples of one relation in file order.
  const std::vector<Triple>& relation_triples(RelationId r) const {
    static const std::vector<Triple> empty;
    return r < by_relation_.size() ? by_relation_[r] : empty;
  }

  bool contains(const Triple& t) const { return present_.count(key(t)) > 0; }

  // Known tails of (head, relation) over the full graph.
  std::vector<EntityId> tails_of(EntityId head, RelationId relation) const {
    std::vector<EntityId> out;
    auto it = tails_.find(pair_key(head, relation));
    if (it != tails_.end()) out.assign(it->second.begin(), it->second.end());
    return out;
  }
  std::size_t tail_count(EntityId head, RelationId relation) const {
    auto it = tails_.find(pair_key(head, relation));
    return it == tails_.end() ? 0 : it->second.size();
  }

  // Adjacency over all triples.
  Adjacency adjacency() const { return adjacency_excluding({}); }

  // Adjacency over triples whose relation is not in `excluded`.
  Adjacency adjacency_excluding(const std::set<RelationId>& excluded) const {
    Adjacency adj(num_entities());
    for (const auto& t : triples_)
      if (!excluded.count(t.relation)) adj[t.head].push_back({t.relation, t.tail});
    return adj;
  }

 private:
  static std::uint64_t pair_key(EntityId h, RelationId r) {
    return (static_cast<std::uint64_t>(h) << 24) ^ static_cast<std::uint64_t>(r);
  }
  static std::string key(const Triple& t) {
    return std::to_string(t.head) + ':' + std::to_string(t.relation) + ':' + std::to_string(t.tail);
  }

  bool add(const Triple& t) {
    if (!present_.insert(key(t)).second) {
      ++duplicates_;
      return false;
    }
    triples_.push_back(t);
    if (by_relation_.size() <= t.relation) by_relation_.resize(t.relation + 1);
    by_relation_[t.relation].push_back(t);
    tails_[pair_key(t.head, t.relation)].insert(t.tail);
    return true;
  }

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> triples_;
  std::vector<std::vector<Triple>> by_relation_;
  std::unordered_set<std::string> present_;
  std::unordered_map<std::uint64_t, std::set<EntityId>> tails_;
  std::size_t duplicates_ = 0;
};

// Parses "head\trelation\ttail" lines. Blank lines are skipped.
inline KnowledgeGraph parse_triples(std::istream& in, const std::string& origin = "<stream>") {
  KnowledgeGraph kg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                       std::to_string(fields.size()));
    }
    kg.add(fields[0], fields[1], fields[2]);
  }
  if (kg.triples().empty()) throw ParseError(origin + ": no triples");
  return kg;
}

inline KnowledgeGraph load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple file: " + path);
  return parse_triples(in, path);
}

inline void save_triples(const KnowledgeGraph& kg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write triple file: " + path);
  for (const auto& t : kg.triples()) {
    out << kg.entities().name(t.head) << '\t' << kg.relations().name(t.relation) << '\t'
        << kg.entities().name(t.tail) << '\n';
  }
}

enum class RelationCategory { one_to_one, one_to_many };

inline const char* to_string(RelationCategory c) {
  return c == RelationCategory::one_to_one ? "one_to_one" : "one_to_many";
}

// Mean distinct tails per head above this marks a relation one-to-many.
inline constexpr double kOneToManyThreshold = 1.5;

inline RelationCategory categorize_relation(const KnowledgeGraph& kg, RelationId relation) {
  std::map<EntityId, std::set<EntityId>> tails;
  for (const auto& t : kg.relation_triples(relation)) tails[t.head].insert(t.tail);
  if (tails.empty()) return RelationCategory::one_to_one;
  double total = 0;
  for (const auto& [h, ts] : tails) total += static_cast<double>(ts.size());
  const double mean = total / static_cast<double>(tails.size());
  return mean > kOneToManyThreshold ? RelationCategory::one_to_many : RelationCategory::one_to_one;
}

}  // namespace npfkgc

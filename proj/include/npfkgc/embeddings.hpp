#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "npfkgc/kg.hpp"
#include "npfkgc/rng.hpp"

namespace npfkgc {

// Row-major |rows| x dim matrix of initial representations.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  double* row(std::size_t i) { return &values[i * dim]; }
  const double* row(std::size_t i) const { return &values[i * dim]; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;
};

struct EmbeddingTable {
  EmbeddingMatrix entity;
  EmbeddingMatrix relation;

  std::size_t dim() const { return entity.dim; }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

// Standard TransE initialization: uniform(-6/sqrt(d), 6/sqrt(d)).
inline EmbeddingTable init_embeddings(const KnowledgeGraph& kg, std::size_t dim, Rng& rng) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be >= 1");
  const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  EmbeddingTable t;
  t.entity = {kg.num_entities(), dim, std::vector<double>(kg.num_entities() * dim)};
  t.relation = {kg.num_relations(), dim, std::vector<double>(kg.num_relations() * dim)};
  for (double& v : t.entity.values) v = u(rng);
  for (double& v : t.relation.values) v = u(rng);
  return t;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(where + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

// File layout: a header line "count dim", then one line per row:
// "name v1 v2 ... vd". Values use shortest round-trip formatting.
inline void save_embedding_file(const std::string& path, const std::vector<std::string>& names,
                                const EmbeddingMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding file: " + path);
  out << m.rows << ' ' << m.dim << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    out << names.at(i);
    for (std::size_t j = 0; j < m.dim; ++j) out << ' ' << detail::format_double(m.row(i)[j]);
    out << '\n';
  }
}

inline EmbeddingMatrix load_embedding_file(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header");
  std::istringstream header(line);
  std::size_t count = 0, dim = 0;
  if (!(header >> count >> dim) || dim == 0) throw ParseError(path + ":1: header must be 'count dim'");
  EmbeddingMatrix m{vocab.size(), dim, std::vector<double>(vocab.size() * dim, 0.0)};
  std::vector<bool> seen(vocab.size(), false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string name, tok;
    row >> name;
    std::vector<double> vals;
    const std::string where = path + ":" + std::to_string(line_no);
    while (row >> tok) vals.push_back(detail::parse_double(tok, where));
    if (vals.size() != dim) throw ParseError(where + ": expected " + std::to_string(dim) + " values");
    if (!vocab.contains(name)) continue;
    const std::size_t i = vocab.at(name);
    std::copy(vals.begin(), vals.end(), m.row(i));
    seen[i] = true;
  }
  std::string missing;
  std::size_t n_missing = 0;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) continue;
    if (n_missing++ < 20) missing += (missing.empty() ? "" : ", ") + vocab.name(i);
  }
  if (n_missing) {
    throw DataError(path + ": missing " + std::to_string(n_missing) + " embedding(s): " + missing +
                    (n_missing > 20 ? ", ..." : ""));
  }
  for (double v : m.values)
    if (!std::isfinite(v)) throw DataError(path + ": non-finite embedding value");
  return m;
}

inline void save_embeddings(const EmbeddingTable& t, const KnowledgeGraph& kg, const std::string& entity_path,
                            const std::string& relation_path) {
  save_embedding_file(entity_path, kg.entities().names(), t.entity);
  save_embedding_file(relation_path, kg.relations().names(), t.relation);
}

inline EmbeddingTable load_embeddings(const std::string& entity_path, const std::string& relation_path,
                                      const KnowledgeGraph& kg) {
  EmbeddingTable t;
  t.entity = load_embedding_file(entity_path, kg.entities());
  t.relation = load_embedding_file(relation_path, kg.relations());
  if (t.entity.dim != t.relation.dim) throw DataError("entity and relation embedding dimensions differ");
  return t;
}

}  // namespace npfkgc

#pragma once

// Ranking evaluation: filtered tail ranks, MRR / Hits@N, per-relation and
// per-category reports, K-shot sweeps with latent entropy, and extraction of
// the KL series from training logs.

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npfkgc/model.hpp"

namespace npfkgc {

// 1 + number of non-excluded candidates scoring strictly lower than the
// truth. Equal scores rank behind the truth.
inline std::size_t rank_of_truth(const std::vector<RankedCandidate>& scores, EntityId truth,
                                 const std::set<EntityId>& exclusions = {}) {
  const RankedCandidate* hit = nullptr;
  for (const auto& c : scores)
    if (c.entity == truth) hit = &c;
  if (!hit) throw std::invalid_argument("true tail " + std::to_string(truth) + " is not among the candidates");
  std::size_t rank = 1;
  for (const auto& c : scores)
    if (c.entity != truth && c.score < hit->score && !exclusions.count(c.entity)) ++rank;
  return rank;
}

inline const std::vector<std::size_t>& default_hits_at() {
  static const std::vector<std::size_t> v{1, 5, 10};
  return v;
}

struct Metrics {
  double mrr = 0;
  std::map<std::size_t, double> hits;  // N -> fraction of ranks <= N
  std::size_t count = 0;
};

inline Metrics compute_metrics(const std::vector<std::size_t>& ranks,
                               const std::vector<std::size_t>& hits_at = default_hits_at()) {
  if (ranks.empty()) throw std::invalid_argument("metrics need at least one rank");
  Metrics m;
  m.count = ranks.size();
  for (auto n : hits_at) m.hits[n] = 0;
  for (auto r : ranks) {
    if (r == 0) throw std::invalid_argument("ranks start at 1");
    m.mrr += 1.0 / static_cast<double>(r);
    for (auto n : hits_at)
      if (r <= n) m.hits[n] += 1;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  for (auto& [k, v] : m.hits) v /= n;
  return m;
}

inline nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j{{"mrr", m.mrr}, {"queries", m.count}};
  for (const auto& [n, v] : m.hits) j["hits@" + std::to_string(n)] = v;
  return j;
}

enum class CandidatePolicy { all_entities, provided_list };

struct EvalOptions {
  std::size_t k = 5;
  std::size_t negatives_per_support = 1;
  std::vector<std::size_t> hits_at = default_hits_at();
  bool filtered = true;
  CandidatePolicy policy = CandidatePolicy::all_entities;
  std::map<RelationId, std::vector<EntityId>> candidates;  // provided_list only
  bool sample_latent = false;
  std::size_t entropy_samples = 0;  // 0 skips the entropy estimate
  std::uint64_t seed = 0;
  Stream stream = Stream::evaluation;
};

struct RelationReport {
  RelationId relation = 0;
  std::string name;
  RelationCategory category = RelationCategory::one_to_one;
  std::vector<EntityPair> queries;
  std::vector<std::size_t> ranks;
  Metrics metrics;
  std::optional<double> entropy;
};

struct EvalReport {
  std::size_t k = 0;
  std::vector<RelationReport> relations;
  std::vector<std::string> skipped;
  Metrics overall;
  std::map<RelationCategory, Metrics> by_category;
  std::optional<double> mean_entropy;

  std::size_t query_count() const { return overall.count; }
  bool empty() const { return relations.empty(); }
};

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["k"] = r.k;
  j["query_count"] = r.query_count();
  j["overall"] = r.empty() ? nlohmann::json(nullptr) : metrics_json(r.overall);
  j["by_category"] = nlohmann::json::object();
  for (const auto& [cat, m] : r.by_category) j["by_category"][to_string(cat)] = metrics_json(m);
  j["mean_entropy"] = r.mean_entropy ? nlohmann::json(*r.mean_entropy) : nlohmann::json(nullptr);
  j["relations"] = nlohmann::json::array();
  for (const auto& rel : r.relations) {
    nlohmann::json e = metrics_json(rel.metrics);
    e["relation"] = rel.name;
    e["category"] = to_string(rel.category);
    e["ranks"] = rel.ranks;
    e["entropy"] = rel.entropy ? nlohmann::json(*rel.entropy) : nlohmann::json(nullptr);
    j["relations"].push_back(e);
  }
  j["skipped"] = r.skipped;
  return j;
}

namespace detail {

inline void aggregate(EvalReport& report, const std::vector<std::size_t>& hits_at) {
  std::vector<std::size_t> all;
  std::map<RelationCategory, std::vector<std::size_t>> cats;
  double entropy = 0;
  std::size_t with_entropy = 0;
  for (const auto& rel : report.relations) {
    all.insert(all.end(), rel.ranks.begin(), rel.ranks.end());
    auto& c = cats[rel.category];
    c.insert(c.end(), rel.ranks.begin(), rel.ranks.end());
    if (rel.entropy) entropy += *rel.entropy, ++with_entropy;
  }
  if (!all.empty()) report.overall = compute_metrics(all, hits_at);
  for (const auto& [cat, ranks] : cats) report.by_category[cat] = compute_metrics(ranks, hits_at);
  if (with_entropy) report.mean_entropy = entropy / static_cast<double>(with_entropy);
}

}  // namespace detail

// Latent projection used at prediction time: the flowed base mean, or a
// flowed sample when `sample` is set.
inline LatentProjection predict_projection(const NpFkgcModel& model, const GaussianParams& prior, bool sample,
                                           Rng& rng) {
  Tensor z0 = sample ? reparameterize(prior, standard_normal(prior.mu.size(), rng)) : prior.mu;
  return model.decoder.project(model.flow.forward(z0).z);
}

// Ranks every query of one task against the candidate set.
inline RelationReport evaluate_task(const NpFkgcModel& model, const KnowledgeGraph& kg, const EntityReps& reps,
                                    const FewShotTask& task, const EvalOptions& opt, Rng& latent_rng,
                                    Rng& entropy_rng) {
  TapeScope no_grad(nullptr);
  RelationReport out;
  out.relation = task.relation;
  out.name = kg.relations().name(task.relation);
  out.category = categorize_relation(kg, task.relation);
  TaskEncoding enc = model.encode_task(reps, task);
  LatentProjection proj = predict_projection(model, enc.prior, opt.sample_latent, latent_rng);

  std::vector<EntityId> candidates;
  if (opt.policy == CandidatePolicy::provided_list) {
    auto it = opt.candidates.find(task.relation);
    if (it == opt.candidates.end()) throw DataError("no candidate list for relation " + out.name);
    candidates = it->second;
  } else {
    candidates = all_entities(kg.num_entities());
  }
  Tensor rows = gather_rows(reps.rows, reps.indices(candidates));

  for (const auto& q : task.target_pos) {
    ++model.counter.query;
    auto ranked = rank_candidates(proj, reps.get(q.head), enc.relation.relation, candidates, rows);
    std::set<EntityId> exclusions;
    if (opt.filtered)
      for (auto t : kg.tails_of(q.head, task.relation))
        if (t != q.tail) exclusions.insert(t);
    out.queries.push_back(q);
    out.ranks.push_back(rank_of_truth(ranked, q.tail, exclusions));
  }
  out.metrics = compute_metrics(out.ranks, opt.hits_at);
  if (opt.entropy_samples) out.entropy = latent_entropy(model.flow, enc.prior, opt.entropy_samples, entropy_rng);
  return out;
}

// Evaluates each relation from its first K triples (support) against its
// remaining triples (queries). Relations with <= K triples are skipped.
inline EvalReport evaluate(const NpFkgcModel& model, const KnowledgeGraph& kg, const std::vector<RelationId>& relations,
                           const EvalOptions& opt) {
  TapeScope no_grad(nullptr);
  EvalReport report;
  report.k = opt.k;
  Rng task_rng = make_stream(opt.seed, opt.stream, 0);
  Rng latent_rng = make_stream(opt.seed, opt.stream, 1);
  Rng entropy_rng = make_stream(opt.seed, Stream::entropy, static_cast<std::uint32_t>(opt.stream));
  std::optional<EntityReps> reps;
  TaskOptions topt;
  topt.k = opt.k;
  topt.negatives_per_support = opt.negatives_per_support;
  topt.negatives_per_query = 0;
  for (RelationId r : relations) {
    if (kg.relation_triples(r).size() <= opt.k) {
      report.skipped.push_back(kg.relations().name(r));
      continue;
    }
    FewShotTask task = build_task(kg, r, topt, task_rng);
    if (!reps) reps = model.encode_all();
    report.relations.push_back(evaluate_task(model, kg, *reps, task, opt, latent_rng, entropy_rng));
  }
  detail::aggregate(report, opt.hits_at);
  return report;
}

struct SweepRow {
  std::size_t k = 0;
  EvalReport report;
};

inline std::vector<SweepRow> kshot_sweep(const NpFkgcModel& model, const KnowledgeGraph& kg,
                                         const std::vector<RelationId>& relations, const std::vector<std::size_t>& ks,
                                         EvalOptions opt) {
  if (ks.empty()) throw std::invalid_argument("k sweep needs at least one K");
  std::vector<SweepRow> rows;
  for (auto k : ks) {
    opt.k = k;
    rows.push_back({k, evaluate(model, kg, relations, opt)});
  }
  return rows;
}

inline std::string sweep_tsv(const std::vector<SweepRow>& rows, const std::vector<std::size_t>& hits_at = default_hits_at()) {
  std::ostringstream out;
  out << "k\tqueries\tmrr";
  for (auto n : hits_at) out << "\thits@" << n;
  out << "\tentropy\n";
  for (const auto& row : rows) {
    const auto& m = row.report.overall;
    out << row.k << '\t' << m.count << '\t' << detail::format_double(m.mrr);
    for (auto n : hits_at) out << '\t' << detail::format_double(m.hits.count(n) ? m.hits.at(n) : 0.0);
    out << '\t' << (row.report.mean_entropy ? detail::format_double(*row.report.mean_entropy) : "nan") << '\n';
  }
  return out.str();
}

struct KlPoint {
  std::size_t epoch = 0;
  double kl = 0;
};

// Reads "key=value" epoch lines; lines without an epoch key are ignored.
inline std::vector<KlPoint> kl_trajectory(std::istream& log) {
  std::vector<KlPoint> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(log, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::map<std::string, std::string> kv;
    std::string tok;
    while (fields >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) throw ParseError("log line " + std::to_string(line_no) + ": bad field '" + tok + "'");
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    if (!kv.count("epoch")) continue;
    if (!kv.count("kl")) throw ParseError("log line " + std::to_string(line_no) + ": missing kl field");
    const std::string where = "log line " + std::to_string(line_no);
    KlPoint p;
    p.epoch = static_cast<std::size_t>(detail::parse_double(kv["epoch"], where));
    p.kl = detail::parse_double(kv["kl"], where);
    out.push_back(p);
  }
  return out;
}

inline std::string kl_tsv(const std::vector<KlPoint>& series) {
  std::ostringstream out;
  out << "epoch\tkl\n";
  for (const auto& p : series) out << p.epoch << '\t' << detail::format_double(p.kl) << '\n';
  return out.str();
}

}  // namespace npfkgc

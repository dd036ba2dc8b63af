// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "npfkgc/cli.hpp"
#include "support/flow_oracles.hpp"
#include "support/gradcheck.hpp"

namespace npfkgc::acceptance {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1) {
  std::uniform_real_distribution<double> d(-scale, scale);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

void randomize(ParameterStore& store, Rng& rng, double scale) {
  for (auto [name, t] : store.entries())
    for (double& v : t.mutable_data()) v += std::uniform_real_distribution<double>(-scale, scale)(rng);
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }

std::vector<Tensor> store_tensors(const ParameterStore& store) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : store.entries()) out.push_back(t);
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = 0.5 * static_cast<double>(i + j) + 1;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0;
}

// ---- 1. gradient suite

struct ModuleGrad {
  std::size_t configs = 0;
  double worst = 0;
  std::string where;

  void add(const testing::GradCheck& r, const std::string& tag) {
    ++configs;
    if (r.max_rel_err > worst) worst = r.max_rel_err, where = tag + " " + r.worst;
  }
};

ModuleGrad grad_arpgnn(Rng& rng, std::size_t configs) {
  ModuleGrad m;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t n = pick(rng, 3, 6), rels = pick(rng, 1, 3), d = pick(rng, 2, 4), layers = pick(rng, 1, 2);
    ParameterStore store;
    ArpGnn gnn(store, layers, rels, d, rng);
    randomize(store, rng, 0.2);
    Adjacency adj(n);
    for (std::size_t e = 0; e < n; ++e)
      for (std::size_t k = pick(rng, 0, 3); k > 0; --k) adj[e].push_back({pick(rng, 0, rels - 1), pick(rng, 0, n - 1)});
    Tensor ent = random_tensor({n, d}, rng), rel = random_tensor({rels, d}, rng), w = random_tensor({d}, rng);
    std::vector<EntityId> targets{0, pick(rng, 1, n - 1)};
    auto params = store_tensors(store);
    params.push_back(ent);
    params.push_back(rel);
    m.add(testing::check_gradients(params,
                                   [&] {
                                     auto reps = encode_entities(gnn, adj, ent, rel, targets);
                                     return dot(reps.get(targets[0]), w) + sum(square(reps.get(targets[1])));
                                   }),
          "n=" + std::to_string(n) + " L=" + std::to_string(layers));
  }
  return m;
}

ModuleGrad grad_relenc(Rng& rng, std::size_t configs) {
  ModuleGrad m;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t d = pick(rng, 1, 3), hidden = pick(rng, 1, 4), layers = pick(rng, 1, 2), k = pick(rng, 1, 4);
    ParameterStore store;
    RelationEncoder enc(store, d, hidden, layers, rng);
    randomize(store, rng, 0.2);
    std::vector<Tensor> support;
    for (std::size_t i = 0; i < k; ++i) support.push_back(random_tensor({2 * d}, rng));
    Tensor w = random_tensor({d}, rng);
    auto params = store_tensors(store);
    params.insert(params.end(), support.begin(), support.end());
    m.add(testing::check_gradients(params, [&] { return dot(enc(support).relation, w); }),
          "K=" + std::to_string(k) + " H=" + std::to_string(hidden));
  }
  return m;
}

ModuleGrad grad_npflow(Rng& rng, std::size_t configs) {
  ModuleGrad m;
  const FlowKind kinds[] = {FlowKind::planar, FlowKind::radial, FlowKind::realnvp};
  for (std::size_t c = 0; c < configs; ++c) {
    const FlowKind kind = kinds[c % 3];
    const std::size_t d = pick(rng, 1, 3), dz = pick(rng, 2, 4), steps = pick(rng, 1, 3), rows_n = pick(rng, 2, 5);
    ParameterStore store;
    NpEncoder enc(store, d, dz, rng);
    FlowChain chain(store, kind, steps, dz, rng);
    randomize(store, rng, 0.3);
    Tensor rows = random_tensor({rows_n, 2 * d + 1}, rng);
    const auto eps = standard_normal(dz, rng);
    auto params = store_tensors(store);
    params.push_back(rows);
    m.add(testing::check_gradients(params,
                                   [&] {
                                     auto p = enc.base_distribution(enc.encode_context(rows));
                                     auto s = sample_latent(chain, p, eps);
                                     return s.base_log_density - s.sum_log_det + sum(square(s.z_t));
                                   }),
          std::string(to_string(kind)) + " T=" + std::to_string(steps));
  }
  return m;
}

ModuleGrad grad_decoder(Rng& rng, std::size_t configs) {
  ModuleGrad m;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t dz = pick(rng, 1, 4), d = pick(rng, 1, 4), n = pick(rng, 1, 4);
    ParameterStore store;
    ManifoldDecoder dec(store, dz, d, rng);
    Tensor z = random_tensor({dz}, rng), h = random_tensor({d}, rng), r = random_tensor({d}, rng);
    Tensor heads = random_tensor({n, d}, rng), tails = random_tensor({n, d}, rng);
    auto params = store_tensors(store);
    for (const auto& t : {z, h, r, heads, tails}) params.push_back(t);
    m.add(testing::check_gradients(params,
                                   [&] {
                                     auto p = dec.project(z);
                                     return score(p, h, r, row(tails, 0)) + sum(score_rows(p, heads, r, tails));
                                   }),
          "dz=" + std::to_string(dz) + " d=" + std::to_string(d));
  }
  return m;
}

Outcome gradient_suite() {
  Rng rng(101);
  const std::size_t configs = 24;
  const std::pair<const char*, ModuleGrad> mods[] = {{"arpgnn", grad_arpgnn(rng, configs)},
                                                     {"relenc", grad_relenc(rng, configs)},
                                                     {"npflow", grad_npflow(rng, configs)},
                                                     {"decoder", grad_decoder(rng, configs)}};
  Outcome o{true, ""};
  for (const auto& [name, m] : mods) {
    o.pass = o.pass && m.configs >= 20 && m.worst < 1e-4;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + name + " " + std::to_string(m.configs) + " configs max " + fmt(m.worst, 3);
    if (m.worst >= 1e-4) o.detail += " at " + m.where;
  }
  return o;
}

// ---- 2. flow correctness

Outcome flow_correctness() {
  Rng rng(202);
  double worst_logdet = 0, worst_trip = 0, worst_constraint = INFINITY;
  TapeScope off(nullptr);
  for (FlowKind kind : {FlowKind::planar, FlowKind::radial, FlowKind::realnvp})
    for (std::size_t dz : {2u, 4u, 6u})
      for (std::size_t steps : {1u, 3u}) {
        ParameterStore store;
        FlowChain chain(store, kind, steps, dz, rng);
        randomize(store, rng, 0.5);
        for (int trial = 0; trial < 3; ++trial) {
          auto z0 = random_tensor({dz}, rng, 1.5).values();
          auto f = [&](const std::vector<double>& z) { return chain.forward(Tensor::vector(z)).z.values(); };
          const double numeric = testing::log_abs_det(testing::numeric_jacobian(f, z0));
          worst_logdet = std::max(worst_logdet, std::abs(chain.forward(Tensor::vector(z0)).sum_log_det.item() - numeric));
          if (kind == FlowKind::realnvp) {
            auto back = chain.inverse(chain.forward(Tensor::vector(z0)).z.values());
            for (std::size_t j = 0; j < dz; ++j) worst_trip = std::max(worst_trip, std::abs(back[j] - z0[j]));
          }
        }
      }

  ParameterStore store;
  FlowChain chain(store, FlowKind::planar, 3, 4, rng);
  Adam adam(AdamConfig{.lr = 0.05});
  for (int step = 0; step < 1000; ++step) {
    store.zero_grad();
    {
      Tape tape;
      TapeScope on(&tape);
      auto res = chain.forward(random_tensor({4}, rng, 2));
      tape.backward(dot(res.z, random_tensor({4}, rng, 3)) + res.sum_log_det * random_tensor({1}, rng, 3));
    }
    adam.step(store);
    for (const auto& s : chain.stages) {
      const auto& p = std::get<PlanarStage>(s);
      worst_constraint = std::min(worst_constraint, dot(p.w, p.constrained_u()).item());
    }
  }
  return {worst_logdet < 1e-6 && worst_trip < 1e-8 && worst_constraint >= -1,
          "max |logdet - numeric| " + fmt(worst_logdet, 3) + ", realnvp round trip " + fmt(worst_trip, 3) +
              ", min w.u_hat over 1000 Adam updates " + fmt(worst_constraint, 6)};
}

// ---- 3. density normalization

Outcome density_normalization() {
  Rng rng(303);
  const GaussianParams p{Tensor::vector({0.2, -0.1}), Tensor::vector({0.6, 0.9})};
  Outcome o{true, ""};
  for (FlowKind kind : {FlowKind::planar, FlowKind::radial, FlowKind::realnvp}) {
    ParameterStore store;
    FlowChain chain(store, kind, 2, 2, rng);
    randomize(store, rng, kind == FlowKind::planar ? 1.0 : 0.5);
    const double mass = testing::integrate_density_2d(chain, p, -8, 8, 0.04);
    o.pass = o.pass && std::abs(mass - 1) <= 0.02;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + to_string(kind) + " " + fmt(mass, 6);
  }
  return o;
}

// ---- 4. KL reduction

Outcome kl_reduction() {
  const GaussianParams q{Tensor::vector({0.5, -1, 2, 0}), Tensor::vector({0.3, 0.9, 0.5, 0.2})};
  const GaussianParams p{Tensor::vector({-0.5, 0, 0.4, 1}), Tensor::vector({0.8, 0.6, 0.5, 0.7})};
  const double closed = gaussian_kl(q.mu.values(), q.sigma.values(), p.mu.values(), p.sigma.values());
  Rng rng = make_stream(404, Stream::latent);
  TapeScope off(nullptr);
  const std::size_t n = 100000;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = sample_latent(FlowChain{}, q, rng);
    total += s.base_log_density.item() - gaussian_log_density(s.z_t, p).item();
  }
  const double mc = total / static_cast<double>(n);
  const double rel = std::abs(mc - closed) / closed;
  return {rel < 0.01, "MC " + fmt(mc, 6) + " closed form " + fmt(closed, 6) + " rel err " + fmt(rel, 3)};
}

// ---- 5. permutation invariance

Outcome permutation_invariance() {
  Rng rng(505);
  ParameterStore store;
  NpEncoder enc(store, 4, 6, rng);
  Tensor rows = random_tensor({20, 9}, rng, 2);
  TapeScope off(nullptr);
  const auto base = enc.encode_context(rows).values();
  const auto prior = enc.base_distribution(enc.encode_context(rows));
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto agg = enc.encode_context(gather_rows(rows, perm));
    const auto p = enc.base_distribution(agg);
    for (std::size_t j = 0; j < base.size(); ++j) worst = std::max(worst, std::abs(agg[j] - base[j]));
    for (std::size_t j = 0; j < 6; ++j) {
      worst = std::max(worst, std::abs(p.mu[j] - prior.mu[j]));
      worst = std::max(worst, std::abs(p.sigma[j] - prior.sigma[j]));
    }
  }
  return {worst <= 1e-12, "max deviation over 100 permutations " + fmt(worst, 3)};
}

// ---- 6. metric oracle

TrainConfig small_config() {
  TrainConfig c;
  c.model.dim = 8;
  c.model.latent_dim = 8;
  c.model.lstm_hidden = 6;
  c.model.lstm_layers = 1;
  c.model.flow_steps = 3;
  c.k = 3;
  return c;
}

Outcome metric_oracle() {
  SynthOptions so;
  so.entities = 20;
  so.train = 2;
  so.valid = 1;
  so.test = 3;
  so.heads_per_relation = 6;
  so.arity = 2;
  so.one_to_many_fraction = 0.5;
  so.seed = 6;
  so.transe = {.dim = 8, .epochs = 50, .margin = 1, .lr = 0.03};
  const SynthData data = generate_synthetic(so);
  const TrainConfig cfg = small_config();
  auto model = make_model(data.kg, data.split, data.embeddings, cfg);
  Rng rng(606);
  randomize(model->params, rng, 0.3);

  const auto all = data.split.all();
  const std::vector<RelationId> relations(all.begin(), all.end());
  EvalOptions opt;
  opt.k = cfg.k;
  opt.seed = 6;
  const EvalReport report = evaluate(*model, data.kg, relations, opt);

  // Exhaustive re-scoring: rebuild each task, score every entity one at a time.
  TapeScope off(nullptr);
  Rng task_rng = make_stream(opt.seed, opt.stream, 0);
  const EntityReps reps = model->encode_all();
  std::size_t compared = 0, mismatched = 0, index = 0;
  for (RelationId r : relations) {
    if (data.kg.relation_triples(r).size() <= opt.k) continue;
    TaskOptions topt;
    topt.k = opt.k;
    topt.negatives_per_support = opt.negatives_per_support;
    topt.negatives_per_query = 0;
    const FewShotTask task = build_task(data.kg, r, topt, task_rng);
    const TaskEncoding enc = model->encode_task(reps, task);
    const LatentProjection proj = model->decoder.project(model->flow.forward(enc.prior.mu).z);
    const auto& rr = report.relations.at(index++);
    for (std::size_t qi = 0; qi < task.target_pos.size(); ++qi) {
      const auto& q = task.target_pos[qi];
      const auto tails = data.kg.tails_of(q.head, r);
      const double truth = score(proj, reps.get(q.head), enc.relation.relation, reps.get(q.tail)).item();
      std::size_t rank = 1;
      for (EntityId e = 0; e < data.kg.num_entities(); ++e) {
        if (e == q.tail || std::find(tails.begin(), tails.end(), e) != tails.end()) continue;
        if (score(proj, reps.get(q.head), enc.relation.relation, reps.get(e)).item() < truth) ++rank;
      }
      ++compared;
      if (rr.ranks.at(qi) != rank) ++mismatched;
    }
  }
  const bool hand = compute_metrics({1, 2, 4}).mrr == 7.0 / 12;
  return {mismatched == 0 && compared > 0 && index == report.relations.size() && hand,
          std::to_string(compared) + " ranks on " + std::to_string(data.kg.num_entities()) + " entities, " +
              std::to_string(mismatched) + " mismatches; MRR([1,2,4]) == 7/12: " + (hand ? "yes" : "no")};
}

// ---- shared desk-scale training

TrainConfig desk_config(std::size_t flow_steps, std::uint64_t seed) {
  TrainConfig c;
  c.model.dim = 32;
  c.model.latent_dim = 32;
  c.model.lstm_hidden = 32;
  c.model.lstm_layers = 1;
  c.model.flow_steps = flow_steps;
  c.k = 5;
  c.batch = 16;
  c.steps_per_epoch = 10;
  c.query_negatives = 5;
  c.max_queries = 8;
  c.lr = 1e-3;
  c.max_epochs = 100;
  c.patience = 100;
  c.seed = seed;
  return c;
}

SynthOptions desk_synth(std::uint64_t seed, double one_to_many) {
  SynthOptions so;
  so.seed = seed;
  so.one_to_many_fraction = one_to_many;
  so.arity = 3;
  so.transe.dim = 32;
  return so;
}

struct DeskRun {
  std::unique_ptr<NpFkgcModel> model;
  std::vector<KlPoint> kl;
};

DeskRun desk_train(const SynthData& data, const TrainConfig& cfg, const fs::path& log_path) {
  DeskRun run;
  run.model = make_model(data.kg, data.split, data.embeddings, cfg);
  Trainer trainer(data.kg, data.split, cfg, *run.model);
  std::ofstream log(log_path);
  std::stringstream lines;
  auto res = trainer.run([&](const std::string& l) { log << l << '\n', lines << l << '\n'; });
  restore(run.model->params, res.best.params);
  run.kl = kl_trajectory(lines);
  return run;
}

EvalOptions desk_eval(std::uint64_t seed) {
  EvalOptions o;
  o.k = 5;
  o.seed = seed;
  return o;
}

int cli(const std::vector<std::string>& args, const fs::path& log) {
  std::ofstream out(log, std::ios::app);
  return cli::run(args, out, out);
}

// ---- 7. end-to-end synthetic FKGC through the CLI

std::vector<std::string> desk_train_args(const fs::path& data, const fs::path& out, std::size_t epochs) {
  const auto cfg = desk_config(10, 1);
  return {"train",
          "--triples", (data / "triples.tsv").string(),
          "--split", (data / "split.json").string(),
          "--entity-embeddings", (data / "entity2vec.txt").string(),
          "--relation-embeddings", (data / "relation2vec.txt").string(),
          "--dim", std::to_string(cfg.model.dim),
          "--latent-dim", std::to_string(cfg.model.latent_dim),
          "--lstm-hidden", std::to_string(cfg.model.lstm_hidden),
          "--lstm-layers", std::to_string(cfg.model.lstm_layers),
          "--gnn-layers", "2",
          "--flow", "planar",
          "--flow-steps", "10",
          "--k", "5",
          "--batch", std::to_string(cfg.batch),
          "--steps-per-epoch", std::to_string(cfg.steps_per_epoch),
          "--query-negatives", std::to_string(cfg.query_negatives),
          "--max-queries", std::to_string(cfg.max_queries),
          "--lr", "0.001",
          "--epochs", std::to_string(epochs),
          "--patience", std::to_string(epochs),
          "--seed", "1",
          "--output-dir", out.string()};
}

Outcome end_to_end(const fs::path& work) {
  const auto dir = work / "c7";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto log = dir / "cli.log";
  if (cli({"synth", "--output-dir", (dir / "data").string(), "--entities", "100", "--train-relations", "8",
           "--valid-relations", "2", "--test-relations", "4", "--dim", "32", "--seed", "1"},
          log) != 0)
    return {false, "synth failed, see " + log.string()};
  if (cli(desk_train_args(dir / "data", dir / "run", 100), log) != 0) return {false, "train failed, see " + log.string()};
  if (cli({"eval", "--triples", (dir / "data" / "triples.tsv").string(), "--checkpoint", (dir / "run" / "best.ckpt").string(),
           "--output-dir", (dir / "eval").string()},
          log) != 0)
    return {false, "eval failed, see " + log.string()};
  const auto report = nlohmann::json::parse(read_file(dir / "eval" / "report.json"));
  const double mrr = report["overall"]["mrr"], hits1 = report["overall"]["hits@1"];
  double random_mrr = 0;
  for (int r = 1; r <= 100; ++r) random_mrr += 1.0 / r;
  random_mrr /= 100;
  return {mrr >= 0.8 && hits1 >= 0.6, "test MRR " + fmt(mrr) + " Hits@1 " + fmt(hits1) + " (random MRR " +
                                          fmt(random_mrr, 3) + ", " + std::to_string(report["query_count"].get<int>()) +
                                          " queries)"};
}

// ---- 8 / 9. flow ablation and non-collapse

struct AblationRun {
  std::uint64_t seed;
  double mrr_t10 = 0, mrr_t0 = 0;
  std::vector<KlPoint> kl_t10, kl_t0;
};

std::vector<AblationRun>& ablation_runs() {
  static std::vector<AblationRun> runs;
  return runs;
}

void write_kl(const fs::path& path, const std::vector<KlPoint>& kl) {
  std::ofstream(path) << kl_tsv(kl);
}

Outcome flow_ablation(const fs::path& work) {
  const auto dir = work / "c8";
  fs::create_directories(dir);
  std::vector<double> t10, t0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SynthData data = generate_synthetic(desk_synth(seed, 0.5));
    AblationRun a;
    a.seed = seed;
    for (std::size_t steps : {10u, 0u}) {
      const std::string tag = "T" + std::to_string(steps) + "_seed" + std::to_string(seed);
      auto run = desk_train(data, desk_config(steps, seed), dir / (tag + ".log"));
      write_kl(dir / (tag + "_kl.tsv"), run.kl);
      const auto report = evaluate(*run.model, data.kg, data.split.test, desk_eval(seed));
      const double m = report.by_category.at(RelationCategory::one_to_many).mrr;
      (steps ? a.mrr_t10 : a.mrr_t0) = m;
      (steps ? a.kl_t10 : a.kl_t0) = run.kl;
    }
    t10.push_back(a.mrr_t10);
    t0.push_back(a.mrr_t0);
    per_seed += (per_seed.empty() ? "" : " ") + fmt(a.mrr_t10, 3) + "/" + fmt(a.mrr_t0, 3);
    ablation_runs().push_back(std::move(a));
  }
  const double m10 = median(t10), m0 = median(t0);
  return {m10 > m0, "one-to-many MRR median T=10 " + fmt(m10) + " vs T=0 " + fmt(m0) + " (per seed T10/T0: " + per_seed + ")"};
}

double converged_kl(const std::vector<KlPoint>& kl) {
  const std::size_t tail = std::min<std::size_t>(10, kl.size());
  double s = 0;
  for (std::size_t i = kl.size() - tail; i < kl.size(); ++i) s += kl[i].kl;
  return s / static_cast<double>(tail);
}

Outcome non_collapse() {
  const auto& runs = ablation_runs();
  if (runs.empty()) return {false, "no ablation runs"};
  double min10 = INFINITY, max0 = 0;
  for (const auto& r : runs) {
    if (r.kl_t10.empty() || r.kl_t0.empty()) return {false, "empty KL trajectory"};
    min10 = std::min(min10, converged_kl(r.kl_t10));
    max0 = std::max(max0, converged_kl(r.kl_t0));
  }
  return {min10 > 1e-3, "converged KL (mean of last 10 epochs) T=10 min over seeds " + fmt(min10) + ", T=0 max " +
                            fmt(max0) + "; trajectories in c8/*_kl.tsv"};
}

// ---- 10. entropy trend

Outcome entropy_trend(const fs::path& work) {
  const auto dir = work / "c10";
  fs::create_directories(dir);
  const std::vector<std::size_t> ks{1, 2, 3, 4, 5};
  std::vector<double> mean(ks.size(), 0);
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SynthData data = generate_synthetic(desk_synth(seed, 0));
    auto run = desk_train(data, desk_config(10, seed), dir / ("seed" + std::to_string(seed) + ".log"));
    auto opt = desk_eval(seed);
    opt.entropy_samples = kDefaultEntropySamples;
    const auto rows = kshot_sweep(*run.model, data.kg, data.split.test, ks, opt);
    std::ofstream(dir / ("seed" + std::to_string(seed) + "_sweep.tsv")) << sweep_tsv(rows);
    std::vector<double> h;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      h.push_back(rows[i].report.mean_entropy.value());
      mean[i] += h.back() / 5;
    }
    per_seed += (per_seed.empty() ? "" : " ") + fmt(spearman({1, 2, 3, 4, 5}, h), 2);
  }
  const double rho = spearman({1, 2, 3, 4, 5}, mean);
  std::string curve;
  for (double v : mean) curve += (curve.empty() ? "" : " ") + fmt(v, 4);
  return {rho < 0, "Spearman(K, mean entropy over 5 seeds) " + fmt(rho, 3) + ", entropy by K " + curve +
                       " (per seed " + per_seed + ")"};
}

// ---- 11. complexity instrumentation

Outcome invocation_count() {
  SynthOptions so;
  so.seed = 11;
  so.transe = {.dim = 8, .epochs = 20, .margin = 1, .lr = 0.03};
  const SynthData data = generate_synthetic(so);
  auto model = make_model(data.kg, data.split, data.embeddings, small_config());
  const auto all = data.split.all();
  const std::vector<RelationId> relations(all.begin(), all.end());
  Rng rng(1111), latent(1), entropy(2);
  TapeScope off(nullptr);
  const EntityReps reps = model->encode_all();
  std::size_t exact = 0;
  std::string first_miss;
  for (int t = 0; t < 100; ++t) {
    TaskOptions topt;
    topt.k = pick(rng, 1, 5);
    topt.negatives_per_support = pick(rng, 1, 3);
    topt.negatives_per_query = 0;
    const RelationId r = relations[pick(rng, 0, relations.size() - 1)];
    const FewShotTask task = build_task(data.kg, r, topt, rng);
    model->counter = {};
    EvalOptions opt;
    opt.k = topt.k;
    opt.negatives_per_support = topt.negatives_per_support;
    evaluate_task(*model, data.kg, reps, task, opt, latent, entropy);
    const std::size_t expected = (topt.negatives_per_support + 1) * topt.k + task.target_pos.size();
    if (model->counter.total() == expected) {
      ++exact;
    } else if (first_miss.empty()) {
      first_miss = " first miss: counted " + std::to_string(model->counter.total()) + " expected " + std::to_string(expected);
    }
  }
  return {exact == 100, std::to_string(exact) + "/100 tasks match (n+1)K+m" + first_miss};
}

// ---- 12. reproducibility

Outcome reproducibility(const fs::path& work) {
  const auto dir = work / "c12";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto log = dir / "cli.log";
  const auto data = dir / "data";
  if (cli({"synth", "--output-dir", data.string(), "--entities", "100", "--dim", "32", "--seed", "12"}, log) != 0)
    return {false, "synth failed"};
  for (const char* run : {"a", "b"}) {
    if (cli(desk_train_args(data, dir / run, 10), log) != 0) return {false, std::string("train ") + run + " failed"};
    if (cli({"eval", "--triples", (data / "triples.tsv").string(), "--checkpoint", (dir / run / "best.ckpt").string(),
             "--output-dir", (dir / run / "eval").string(), "--sample-latent"},
            log) != 0)
      return {false, std::string("eval ") + run + " failed"};
  }
  std::string detail;
  bool same = true;
  for (const char* f : {"best.ckpt", "final.ckpt", "train.log", "eval/report.json"}) {
    const bool eq = read_file(dir / "a" / f) == read_file(dir / "b" / f) && !read_file(dir / "a" / f).empty();
    same = same && eq;
    detail += std::string(detail.empty() ? "" : ", ") + f + (eq ? " identical" : " DIFFERENT");
  }
  return {same, detail};
}

struct Criterion {
  int id;
  const char* name;
  double time_limit;  // seconds, 0 = none
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NP-FKGC acceptance suite"};
  std::string work_dir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "scratch directory for generated data and runs");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  unsetenv(cli::kOutputDirEnv);
  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);

  const std::vector<Criterion> criteria{
      {1, "gradient suite", 120, gradient_suite},
      {2, "flow correctness", 60, flow_correctness},
      {3, "density normalization", 60, density_normalization},
      {4, "KL reduction", 30, kl_reduction},
      {5, "permutation invariance", 0, permutation_invariance},
      {6, "metric oracle", 0, metric_oracle},
      {7, "end-to-end synthetic FKGC", 600, [&] { return end_to_end(work); }},
      {8, "flow ablation", 0, [&] { return flow_ablation(work); }},
      {9, "non-collapse", 0, non_collapse},
      {10, "entropy trend", 0, [&] { return entropy_trend(work); }},
      {11, "invocation count", 0, invocation_count},
      {12, "reproducibility", 0, [&] { return reproducibility(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    if (c.id == 9 && ablation_runs().empty() && (only.empty() || std::find(only.begin(), only.end(), 8) == only.end())) {
      std::cout << "FAIL 9 non-collapse: needs criterion 8 in the same run\n";
      ++failed;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit > 0 && secs >= c.time_limit) {
      o.pass = false;
      o.detail += "; exceeded " + fmt(c.time_limit) + " s";
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << ' ' << c.name << ": " << o.detail << " [" << std::fixed
              << std::setprecision(1) << secs << " s]" << std::defaultfloat << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << '\n';
  return failed ? 1 : 0;
}

}  // namespace npfkgc::acceptance

int main(int argc, char** argv) { return npfkgc::acceptance::main(argc, argv); }

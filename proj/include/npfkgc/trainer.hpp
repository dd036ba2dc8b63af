#pragma once

// Episodic training: each step samples few-shot relations, builds tasks,
// minimizes the Monte-Carlo ELBO loss averaged over the batch and applies an
// Adam update. Validation MRR drives best-model selection and early stopping.

#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npfkgc/eval.hpp"
#include "npfkgc/model.hpp"
#include "npfkgc/optim.hpp"

namespace npfkgc {

enum class LossOrientation { corrected, literal };

inline const char* to_string(LossOrientation o) { return o == LossOrientation::literal ? "literal" : "corrected"; }

inline LossOrientation loss_orientation_from_string(const std::string& s) {
  if (s == "corrected") return LossOrientation::corrected;
  if (s == "literal") return LossOrientation::literal;
  throw std::invalid_argument("unknown loss orientation: " + s);
}

struct TrainConfig {
  ModelConfig model;
  std::size_t k = 5;
  std::size_t negatives = 1;        // n, per support triple
  std::size_t query_negatives = 1;  // per query triple
  std::size_t max_queries = 0;      // per training task; 0 keeps all
  double margin = 1.0;              // gamma
  double lr = 1e-3;
  std::size_t mc_samples = 1;
  std::size_t batch = 128;
  std::size_t steps_per_epoch = 0;  // 0: ceil(training relations / batch)
  std::size_t max_epochs = 100;
  std::size_t patience = 3;
  std::uint64_t seed = 1;
  bool freeze_embeddings = false;
  bool enrich = false;
  LossOrientation orientation = LossOrientation::corrected;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"k", c.k},
       {"negatives", c.negatives},
       {"query_negatives", c.query_negatives},
       {"max_queries", c.max_queries},
       {"margin", c.margin},
       {"lr", c.lr},
       {"mc_samples", c.mc_samples},
       {"batch", c.batch},
       {"steps_per_epoch", c.steps_per_epoch},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"seed", c.seed},
       {"freeze_embeddings", c.freeze_embeddings},
       {"enrich", c.enrich},
       {"loss_orientation", to_string(c.orientation)}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.k = j.value("k", c.k);
  c.negatives = j.value("negatives", c.negatives);
  c.query_negatives = j.value("query_negatives", c.query_negatives);
  c.max_queries = j.value("max_queries", c.max_queries);
  c.margin = j.value("margin", c.margin);
  c.lr = j.value("lr", c.lr);
  c.mc_samples = j.value("mc_samples", c.mc_samples);
  c.batch = j.value("batch", c.batch);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.freeze_embeddings = j.value("freeze_embeddings", c.freeze_embeddings);
  c.enrich = j.value("enrich", c.enrich);
  c.orientation = loss_orientation_from_string(j.value("loss_orientation", std::string(to_string(c.orientation))));
}

// Every violated constraint, in field order.
inline std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> errors;
  auto positive = [&](const char* name, double v) {
    if (!(v > 0)) errors.push_back(std::string(name) + " must be positive");
  };
  positive("dim", static_cast<double>(c.model.dim));
  positive("latent_dim", static_cast<double>(c.model.latent_dim));
  positive("lstm_hidden", static_cast<double>(c.model.lstm_hidden));
  positive("lstm_layers", static_cast<double>(c.model.lstm_layers));
  positive("k", static_cast<double>(c.k));
  positive("negatives", static_cast<double>(c.negatives));
  positive("query_negatives", static_cast<double>(c.query_negatives));
  positive("margin", c.margin);
  if (!(c.lr >= 0)) errors.push_back("lr must be non-negative");
  positive("mc_samples", static_cast<double>(c.mc_samples));
  positive("batch", static_cast<double>(c.batch));
  positive("patience", static_cast<double>(c.patience));
  return errors;
}

// log P(t_q | h_q, r, z_T) = -sum max(0, S+ - S- + gamma). `pos` holds one
// score per query, `neg` holds neg.size() / pos.size() scores per query in
// query order. The literal orientation swaps S+ and S-.
inline Tensor ranking_log_likelihood(const Tensor& pos, const Tensor& neg, double margin,
                                     LossOrientation orientation = LossOrientation::corrected) {
  if (pos.size() == 0 || neg.size() == 0) throw std::invalid_argument("ranking likelihood needs scores");
  if (neg.size() % pos.size() != 0) throw DimensionError("negative scores must be a multiple of positive scores");
  const std::size_t per = neg.size() / pos.size();
  Tensor aligned = pos;
  if (per > 1) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pos.size(); ++i)
      for (std::size_t j = 0; j < per; ++j) idx.push_back(i);
    aligned = reshape(gather_rows(reshape(pos, {pos.size(), 1}), idx), {neg.size()});
  }
  Tensor gap = orientation == LossOrientation::corrected ? aligned - neg : neg - aligned;
  return -sum(relu(gap + margin));
}

struct EpisodeLoss {
  Tensor total;  // differentiable
  double ranking = 0;
  double log_q0 = 0;
  double sum_logdet = 0;
  double log_prior = 0;  // log P_T(z_T | C) = log P0(z0 | C) - sum log|det|
  double kl = 0;         // log Q0(z0 | C, D) - log P0(z0 | C)
};

namespace detail {
inline void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term + " term in episode loss");
}
}  // namespace detail

// loss = -[ranking - log Q0(z0|C,D) + sum log|det| + log P_T(z_T|C)], averaged
// over `samples` reparameterized draws.
inline EpisodeLoss elbo_loss(const NpFkgcModel& model, const EntityReps& reps, const FewShotTask& task,
                             double margin, LossOrientation orientation, std::size_t samples, Rng& rng) {
  if (task.context.empty() || task.target_pos.empty() || task.target_neg.empty())
    throw std::invalid_argument("episode needs context and target data");
  TaskEncoding enc = model.encode_task(reps, task);
  GaussianParams post = model.posterior(reps, enc, task);
  EpisodeLoss out;
  const double scale = 1.0 / static_cast<double>(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    LatentState st = sample_latent(model.flow, post, rng);
    Tensor log_p0 = gaussian_log_density(st.z0, enc.prior);
    LatentProjection proj = model.decoder.project(st.z_t);
    Tensor pos = model.score_pairs(reps, proj, enc.relation.relation, task.target_pos);
    Tensor neg = model.score_pairs(reps, proj, enc.relation.relation, task.target_neg);
    Tensor ranking = ranking_log_likelihood(pos, neg, margin, orientation);
    Tensor loss = affine(ranking - st.base_log_density + log_p0, -scale);
    out.total = s == 0 ? loss : out.total + loss;
    out.ranking += scale * ranking.item();
    out.log_q0 += scale * st.base_log_density.item();
    out.sum_logdet += scale * st.sum_log_det.item();
    out.log_prior += scale * (log_p0.item() - st.sum_log_det.item());
    out.kl += scale * (st.base_log_density.item() - log_p0.item());
  }
  detail::check_finite(out.ranking, "ranking");
  detail::check_finite(out.log_q0, "log Q0");
  detail::check_finite(out.sum_logdet, "log-det");
  detail::check_finite(out.log_prior, "log prior");
  detail::check_finite(out.total.item(), "total");
  return out;
}

// Parameter values keyed in store order.
struct ParameterSnapshot {
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> values;

  friend bool operator==(const ParameterSnapshot&, const ParameterSnapshot&) = default;
};

inline ParameterSnapshot snapshot(const ParameterStore& store) {
  ParameterSnapshot s;
  for (const auto& [name, t] : store.entries()) {
    s.names.push_back(name);
    s.shapes.push_back(t.shape());
    s.values.push_back(t.values());
  }
  return s;
}

inline void restore(ParameterStore& store, const ParameterSnapshot& s) {
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    if (!store.contains(s.names[i])) throw DataError("unknown parameter in snapshot: " + s.names[i]);
    Tensor& t = store.get(s.names[i]);
    if (t.shape() != s.shapes[i]) {
      throw DataError("parameter " + s.names[i] + " has shape " + shape_string(s.shapes[i]) + ", model expects " +
                      shape_string(t.shape()));
    }
    std::copy(s.values[i].begin(), s.values[i].end(), t.mutable_data().begin());
  }
  if (s.names.size() != store.size()) throw DataError("snapshot does not cover every model parameter");
}

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0;
  double ranking = 0;
  double log_q0 = 0;
  double sum_logdet = 0;
  double log_prior = 0;
  double kl = 0;
  std::optional<double> valid_mrr;
};

inline std::string log_line(const EpochStats& s) {
  using detail::format_double;
  std::string line = "epoch=" + std::to_string(s.epoch) + " loss=" + format_double(s.loss) +
                     " ranking=" + format_double(s.ranking) + " log_q0=" + format_double(s.log_q0) +
                     " sum_logdet=" + format_double(s.sum_logdet) + " log_prior=" + format_double(s.log_prior) +
                     " kl=" + format_double(s.kl);
  line += " valid_mrr=" + (s.valid_mrr ? format_double(*s.valid_mrr) : std::string("nan"));
  return line;
}

struct TrainState {
  ParameterSnapshot params;
  AdamState adam;
  std::size_t epoch = 0;
  double best_valid_mrr = -1;
};

struct TrainResult {
  TrainState best;
  TrainState last;
  std::vector<EpochStats> history;
};

inline EvalOptions validation_options(const TrainConfig& cfg) {
  EvalOptions opt;
  opt.k = cfg.k;
  opt.negatives_per_support = cfg.negatives;
  opt.seed = cfg.seed;
  opt.stream = Stream::validation;
  return opt;
}

inline std::vector<bool> frozen_mask(const NpFkgcModel& model, bool freeze_embeddings) {
  std::vector<bool> mask;
  for (const auto& [name, t] : model.params.entries()) mask.push_back(freeze_embeddings && model.is_embedding(name));
  return mask;
}

class Trainer {
 public:
  Trainer(const KnowledgeGraph& kg, const TaskSplit& split, const TrainConfig& cfg, NpFkgcModel& model)
      : kg_(kg), split_(split), cfg_(cfg), model_(model), adam_(AdamConfig{cfg.lr}),
        episode_rng_(make_stream(cfg.seed, Stream::episodes)), latent_rng_(make_stream(cfg.seed, Stream::latent)) {
    relations_ = training_relations(kg, split, cfg.k, cfg.enrich);
    if (relations_.empty()) throw DataError("no training relation has more than K triples");
    frozen_ = frozen_mask(model, cfg.freeze_embeddings);
  }

  const std::vector<RelationId>& relations() const { return relations_; }
  Adam& optimizer() { return adam_; }

  std::size_t steps_per_epoch() const {
    if (cfg_.steps_per_epoch) return cfg_.steps_per_epoch;
    return std::max<std::size_t>(1, (relations_.size() + cfg_.batch - 1) / cfg_.batch);
  }

  std::vector<FewShotTask> sample_batch() {
    TaskOptions opt;
    opt.k = cfg_.k;
    opt.negatives_per_support = cfg_.negatives;
    opt.negatives_per_query = cfg_.query_negatives;
    opt.max_queries = cfg_.max_queries;
    opt.random_support = true;
    std::uniform_int_distribution<std::size_t> pick(0, relations_.size() - 1);
    std::vector<FewShotTask> tasks;
    for (std::size_t b = 0; b < cfg_.batch; ++b) tasks.push_back(build_task(kg_, relations_[pick(episode_rng_)], opt, episode_rng_));
    return tasks;
  }

  // One optimizer step; returns the batch-mean loss terms.
  EpochStats step() {
    const auto tasks = sample_batch();
    std::set<EntityId> touched;
    for (const auto& t : tasks) NpFkgcModel::collect_entities(t, touched);
    Tape tape;
    EpochStats mean;
    {
      TapeScope scope(&tape);
      EntityReps reps = model_.encode({touched.begin(), touched.end()});
      Tensor total;
      const double w = 1.0 / static_cast<double>(tasks.size());
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        EpisodeLoss l = elbo_loss(model_, reps, tasks[i], cfg_.margin, cfg_.orientation, cfg_.mc_samples, latent_rng_);
        total = i == 0 ? l.total * w : total + l.total * w;
        mean.ranking += w * l.ranking;
        mean.log_q0 += w * l.log_q0;
        mean.sum_logdet += w * l.sum_logdet;
        mean.log_prior += w * l.log_prior;
        mean.kl += w * l.kl;
      }
      mean.loss = total.item();
      tape.backward(total);
    }
    adam_.step(model_.params, frozen_);
    model_.params.zero_grad();
    return mean;
  }

  double validate() const {
    if (split_.valid.empty()) return 0;
    EvalReport r = evaluate(model_, kg_, split_.valid, validation_options(cfg_));
    return r.empty() ? 0 : r.overall.mrr;
  }

  TrainState state(std::size_t epoch, double best) const { return {snapshot(model_.params), adam_.state(), epoch, best}; }

  // Runs up to max_epochs with early stopping. `log` receives one line per
  // epoch.
  TrainResult run(const std::function<void(const std::string&)>& log = {}) {
    TrainResult res;
    res.best = state(0, -1);
    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
      EpochStats e;
      const std::size_t steps = steps_per_epoch();
      for (std::size_t s = 0; s < steps; ++s) {
        EpochStats st = step();
        const double w = 1.0 / static_cast<double>(steps);
        e.loss += w * st.loss;
        e.ranking += w * st.ranking;
        e.log_q0 += w * st.log_q0;
        e.sum_logdet += w * st.sum_logdet;
        e.log_prior += w * st.log_prior;
        e.kl += w * st.kl;
      }
      e.epoch = epoch;
      if (!split_.valid.empty()) e.valid_mrr = validate();
      res.history.push_back(e);
      if (log) log(log_line(e));
      const double mrr = e.valid_mrr.value_or(0);
      if (split_.valid.empty() || mrr > res.best.best_valid_mrr) {
        res.best = state(epoch, split_.valid.empty() ? -1 : mrr);
        stale = 0;
      } else if (++stale >= cfg_.patience) {
        break;
      }
    }
    res.last = state(res.history.empty() ? 0 : res.history.back().epoch, res.best.best_valid_mrr);
    return res;
  }

 private:
  const KnowledgeGraph& kg_;
  TaskSplit split_;
  TrainConfig cfg_;
  NpFkgcModel& model_;
  Adam adam_;
  Rng episode_rng_;
  Rng latent_rng_;
  std::vector<RelationId> relations_;
  std::vector<bool> frozen_;
};

// Builds a freshly initialized model for `cfg`.
inline std::unique_ptr<NpFkgcModel> make_model(const KnowledgeGraph& kg, const TaskSplit& split,
                                               const EmbeddingTable& init, const TrainConfig& cfg) {
  Rng rng = make_stream(cfg.seed, Stream::init);
  return std::make_unique<NpFkgcModel>(cfg.model, init,
                                       background_adjacency(kg, split, cfg.model.neighbor_cap, cfg.seed), rng);
}

}  // namespace npfkgc

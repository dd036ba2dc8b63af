#include <gtest/gtest.h>

#include <cmath>

#include "npfkgc/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace npfkgc {
namespace {

using testing::tiny_config;
using testing::tiny_data;

std::unique_ptr<NpFkgcModel> tiny_model(const TrainConfig& cfg) {
  const auto& d = tiny_data();
  return make_model(d.kg, d.split, d.embeddings, cfg);
}

FewShotTask train_task(const TrainConfig& cfg, std::size_t index = 0) {
  const auto& d = tiny_data();
  Rng rng(31);
  return build_task(d.kg, d.split.train[index], {.k = cfg.k, .negatives_per_support = 1, .negatives_per_query = 1, .max_queries = 4}, rng);
}

EntityReps task_reps(const NpFkgcModel& model, const FewShotTask& task) {
  std::set<EntityId> touched;
  NpFkgcModel::collect_entities(task, touched);
  return model.encode({touched.begin(), touched.end()});
}

TEST(RankingLikelihood, HandValues) {
  EXPECT_EQ(ranking_log_likelihood(Tensor::vector({0}), Tensor::vector({5}), 1).item(), 0);
  EXPECT_EQ(ranking_log_likelihood(Tensor::vector({2, 3}), Tensor::vector({2, 3}), 1).item(), -2);
  EXPECT_NEAR(ranking_log_likelihood(Tensor::vector({0.1}), Tensor::vector({0.2}), 1).item(), -0.9, 1e-15);
  // Literal orientation swaps the roles: max(0, S- - S+ + gamma).
  EXPECT_NEAR(ranking_log_likelihood(Tensor::vector({0.1}), Tensor::vector({0.2}), 1, LossOrientation::literal).item(),
              -1.1, 1e-15);
}

TEST(RankingLikelihood, SeveralNegativesPerPositive) {
  // Positive 0 against negatives (0.5, 3); positive 1 against (1, 0).
  auto ll = ranking_log_likelihood(Tensor::vector({0, 1}), Tensor::vector({0.5, 3, 1, 0}), 1);
  EXPECT_NEAR(ll.item(), -(0.5 + 0 + 1 + 2), 1e-15);
  EXPECT_THROW(ranking_log_likelihood(Tensor::vector({0, 1}), Tensor::vector({1, 2, 3}), 1), DimensionError);
  EXPECT_THROW(ranking_log_likelihood(Tensor::zeros({0}), Tensor::vector({1}), 1), std::invalid_argument);
}

TEST(RankingLikelihood, EqualScoresCostMarginPerPair) {
  Tensor s = Tensor::full({6}, 0.37);
  EXPECT_NEAR(ranking_log_likelihood(slice(s, 0, 2), s, 1.5).item(), -1.5 * 6, 1e-12);
}

TEST(Kl, MonteCarloMatchesClosedFormAtZeroSteps) {
  // log Q0(z0) - log P0(z0) averaged over draws from Q0.
  const GaussianParams q{Tensor::vector({0.5, -1, 2, 0}), Tensor::vector({0.3, 0.9, 0.5, 0.2})};
  const GaussianParams p{Tensor::vector({-0.5, 0, 0.4, 1}), Tensor::vector({0.8, 0.6, 0.5, 0.7})};
  const double closed = gaussian_kl(q.mu.values(), q.sigma.values(), p.mu.values(), p.sigma.values());
  Rng rng(41);
  TapeScope off(nullptr);
  double total = 0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    auto st = sample_latent(FlowChain{}, q, rng);
    total += st.base_log_density.item() - gaussian_log_density(st.z0, p).item();
  }
  EXPECT_NEAR(total / n, closed, 0.01 * closed);
}

TEST(ElboLoss, TermsAreConsistent) {
  auto cfg = tiny_config(3);
  auto model = tiny_model(cfg);
  auto task = train_task(cfg);
  TapeScope off(nullptr);
  auto reps = task_reps(*model, task);
  Rng rng(3);
  auto l = elbo_loss(*model, reps, task, cfg.margin, cfg.orientation, 4, rng);
  EXPECT_NEAR(l.total.item(), -(l.ranking - l.log_q0 + l.sum_logdet + l.log_prior), 1e-10);
  EXPECT_NEAR(l.kl, l.log_q0 - (l.log_prior + l.sum_logdet), 1e-10);
  EXPECT_LE(l.ranking, 0);
}

TEST(ElboLoss, ZeroStepsKlTracksClosedForm) {
  auto cfg = tiny_config(0);
  auto model = tiny_model(cfg);
  auto task = train_task(cfg);
  TapeScope off(nullptr);
  auto reps = task_reps(*model, task);
  auto enc = model->encode_task(reps, task);
  auto post = model->posterior(reps, enc, task);
  const double closed = gaussian_kl(post.mu.values(), post.sigma.values(), enc.prior.mu.values(), enc.prior.sigma.values());
  Rng rng(4);
  const std::size_t n = 20000;
  auto l = elbo_loss(*model, reps, task, cfg.margin, cfg.orientation, n, rng);
  // Standard error of the log ratio, estimated from a separate batch.
  Rng side(5);
  double m1 = 0, m2 = 0;
  for (std::size_t i = 0; i < 2000; ++i) {
    auto st = sample_latent(FlowChain{}, post, side);
    const double v = st.base_log_density.item() - gaussian_log_density(st.z0, enc.prior).item();
    m1 += v / 2000, m2 += v * v / 2000;
  }
  const double se = std::sqrt(std::max(m2 - m1 * m1, 0.0) / n);
  EXPECT_NEAR(l.kl, closed, 5 * se + 1e-12);
  EXPECT_EQ(l.sum_logdet, 0);
}

TEST(ElboLoss, RejectsEmptyTargets) {
  auto cfg = tiny_config();
  auto model = tiny_model(cfg);
  auto task = train_task(cfg);
  task.target_neg.clear();
  Rng rng(1);
  auto reps = task_reps(*model, task);
  EXPECT_THROW(elbo_loss(*model, reps, task, 1, LossOrientation::corrected, 1, rng), std::invalid_argument);
}

TEST(ElboLoss, GradientsMatchFiniteDifferences) {
  auto cfg = tiny_config(2);
  cfg.model.dim = 4;
  cfg.model.latent_dim = 3;
  cfg.model.lstm_hidden = 3;
  const auto& d = tiny_data();
  EmbeddingTable small;
  Rng er(6);
  small = init_embeddings(d.kg, 4, er);
  for (double& v : small.entity.values) v *= 0.3;
  for (double& v : small.relation.values) v *= 0.3;
  auto model = make_model(d.kg, d.split, small, cfg);
  auto task = train_task(cfg);
  std::vector<Tensor> params;
  for (const auto& [name, t] : model->params.entries())
    if (!model->is_embedding(name)) params.push_back(t);
  auto r = testing::check_gradients(params, [&] {
    Rng rng(7);
    auto reps = task_reps(*model, task);
    return elbo_loss(*model, reps, task, cfg.margin, cfg.orientation, 1, rng).total;
  });
  EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
}

TEST(Trainer, EveryParameterGroupReceivesGradient) {
  auto cfg = tiny_config(2);
  auto model = tiny_model(cfg);
  auto task = train_task(cfg);
  Tape tape;
  {
    TapeScope s(&tape);
    auto reps = task_reps(*model, task);
    Rng rng(8);
    tape.backward(elbo_loss(*model, reps, task, cfg.margin, cfg.orientation, 1, rng).total);
  }
  std::map<std::string, double> groups;
  for (const auto& [name, t] : model->params.entries()) {
    const std::string group = name.substr(0, name.find('.'));
    for (double g : t.grad()) groups[group] += std::abs(g);
  }
  for (const char* g : {"emb", "gnn", "relenc", "np", "flow", "dec"}) {
    ASSERT_TRUE(groups.count(g)) << g;
    EXPECT_GT(groups[g], 0) << g;
  }
}

TEST(Trainer, ZeroLearningRateKeepsParameters) {
  auto cfg = tiny_config();
  cfg.lr = 0;
  auto model = tiny_model(cfg);
  auto before = snapshot(model->params);
  Trainer trainer(tiny_data().kg, tiny_data().split, cfg, *model);
  for (int i = 0; i < 3; ++i) trainer.step();
  EXPECT_EQ(snapshot(model->params), before);
}

TEST(Trainer, FrozenEmbeddingsStayFixed) {
  auto cfg = tiny_config();
  cfg.freeze_embeddings = true;
  auto model = tiny_model(cfg);
  auto before = snapshot(model->params);
  Trainer trainer(tiny_data().kg, tiny_data().split, cfg, *model);
  trainer.step();
  auto after = snapshot(model->params);
  EXPECT_EQ(after.values[0], before.values[0]);
  EXPECT_EQ(after.values[1], before.values[1]);
  EXPECT_NE(after.values.back(), before.values.back());
}

TEST(Trainer, FixedSeedIsBitIdentical) {
  auto run = [] {
    auto cfg = tiny_config();
    auto model = tiny_model(cfg);
    Trainer trainer(tiny_data().kg, tiny_data().split, cfg, *model);
    auto res = trainer.run();
    return std::make_pair(res.best.params, res.last.adam.first_moment);
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, EarlyStoppingAfterPatience) {
  auto cfg = tiny_config();
  cfg.lr = 0;
  cfg.patience = 2;
  cfg.max_epochs = 10;
  auto model = tiny_model(cfg);
  Trainer trainer(tiny_data().kg, tiny_data().split, cfg, *model);
  std::vector<std::string> lines;
  auto res = trainer.run([&](const std::string& l) { lines.push_back(l); });
  EXPECT_EQ(res.history.size(), 3u);
  EXPECT_EQ(res.best.epoch, 1u);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].rfind("epoch=1 loss=", 0), 0u) << lines[0];
  EXPECT_NE(lines[0].find(" kl="), std::string::npos);
  EXPECT_NE(lines[0].find(" valid_mrr="), std::string::npos);
}

TEST(Trainer, LossDecreasesOnSeparableTask) {
  auto cfg = tiny_config(2);
  cfg.max_epochs = 50;
  cfg.batch = 4;
  cfg.steps_per_epoch = 3;
  cfg.lr = 5e-3;
  auto data = tiny_data();
  TaskSplit no_valid = data.split;
  no_valid.valid.clear();
  auto model = make_model(data.kg, no_valid, data.embeddings, cfg);
  Trainer trainer(data.kg, no_valid, cfg, *model);
  auto res = trainer.run();
  ASSERT_EQ(res.history.size(), 50u);
  EXPECT_LT(res.history[49].loss, res.history[0].loss);
  for (const auto& e : res.history) EXPECT_TRUE(std::isfinite(e.loss));
}

TEST(Trainer, NoTrainingRelations) {
  auto cfg = tiny_config();
  cfg.k = 100;
  auto model = tiny_model(tiny_config());
  EXPECT_THROW(Trainer(tiny_data().kg, tiny_data().split, cfg, *model), DataError);
}

TEST(Trainer, InvocationCountPerTask) {
  auto cfg = tiny_config();
  auto model = tiny_model(cfg);
  const auto& d = tiny_data();
  TapeScope off(nullptr);
  auto reps = model->encode_all();
  Rng rng(9), lat(10), ent(11);
  for (std::size_t n : {1u, 2u}) {
    for (RelationId r : d.split.all()) {
      auto task = build_task(d.kg, r, {.k = 3, .negatives_per_support = n, .negatives_per_query = 0}, rng);
      model->counter = {};
      EvalOptions opt;
      opt.k = 3;
      evaluate_task(*model, d.kg, reps, task, opt, lat, ent);
      EXPECT_EQ(model->counter.total(), (n + 1) * 3 + task.target_pos.size());
    }
  }
}

TEST(TrainConfig, ValidationListsEveryViolation) {
  TrainConfig c;
  EXPECT_TRUE(validate(c).empty());
  c.k = 0;
  c.batch = 0;
  c.margin = -1;
  c.lr = -1;
  auto errors = validate(c);
  EXPECT_EQ(errors.size(), 4u);
  EXPECT_EQ(errors[0], "k must be positive");
}

TEST(TrainConfig, JsonRoundTrip) {
  auto c = tiny_config();
  c.orientation = LossOrientation::literal;
  c.model.flow = FlowKind::radial;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>(), c);
  EXPECT_EQ(j["loss_orientation"], "literal");
  EXPECT_THROW(loss_orientation_from_string("other"), std::invalid_argument);
}

}  // namespace
}  // namespace npfkgc

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "npfkgc/embeddings.hpp"
#include "npfkgc/kg.hpp"
#include "npfkgc/model.hpp"
#include "npfkgc/tasks.hpp"
#include "npfkgc/transe.hpp"

namespace npfkgc {
namespace {

namespace fs = std::filesystem;

KnowledgeGraph parse(const std::string& text) {
  std::istringstream in(text);
  return parse_triples(in, "fixture");
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("npfkgc_kgdata_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Relation "r" with `n` triples h_i -> t_i plus spare entities.
KnowledgeGraph chain_relation(std::size_t n, std::size_t spare = 10) {
  KnowledgeGraph kg;
  for (std::size_t i = 0; i < n; ++i) kg.add("h" + std::to_string(i), "r", "t" + std::to_string(i));
  for (std::size_t i = 0; i < spare; ++i) kg.add("x" + std::to_string(i), "bg", "x" + std::to_string(i + 1));
  return kg;
}

TEST(LoadTriples, SingleLine) {
  auto kg = parse("a\tr\tb\n");
  EXPECT_EQ(kg.num_entities(), 2u);
  EXPECT_EQ(kg.num_relations(), 1u);
  EXPECT_EQ(kg.triples().size(), 1u);
}

TEST(LoadTriples, DuplicatesDroppedAndCounted) {
  auto kg = parse("a\tr\tb\na\tr\tb\n");
  EXPECT_EQ(kg.triples().size(), 1u);
  EXPECT_EQ(kg.duplicates_dropped(), 1u);
}

TEST(LoadTriples, AdjacencyTotalsTripleCount) {
  auto kg = parse("a\tr\tb\nb\tr\tc\na\ts\tc\nc\ts\ta\nb\tr\ta\n");
  EXPECT_EQ(kg.num_entities(), 3u);
  std::size_t total = 0;
  for (const auto& edges : kg.adjacency()) total += edges.size();
  EXPECT_EQ(total, 5u);
  const auto adj = kg.adjacency();
  const auto a = kg.entities().at("a");
  ASSERT_EQ(adj[a].size(), 2u);
  EXPECT_EQ(adj[a][0], (Edge{kg.relations().at("r"), kg.entities().at("b")}));
}

TEST(LoadTriples, FirstAppearanceOrder) {
  auto kg = parse("z\tq\ty\ny\tp\tx\n");
  EXPECT_EQ(kg.entities().at("z"), 0u);
  EXPECT_EQ(kg.entities().at("y"), 1u);
  EXPECT_EQ(kg.entities().at("x"), 2u);
  EXPECT_EQ(kg.relations().at("p"), 1u);
}

TEST(LoadTriples, MalformedLineReportsLineNumber) {
  try {
    parse("a\tr\tb\n\na\tr\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(load_triples("/nonexistent/triples.tsv"), DataError);
}

TEST(LoadTriples, SaveLoadRoundTrip) {
  auto kg = parse("a\tr\tb\nb\ts\tc\n");
  auto dir = temp_dir("roundtrip");
  save_triples(kg, (dir / "t.tsv").string());
  auto back = load_triples((dir / "t.tsv").string());
  EXPECT_EQ(back.triples(), kg.triples());
}

TEST(BuildTask, SevenTriplesKFive) {
  auto kg = chain_relation(7);
  Rng rng(1);
  auto task = build_task(kg, kg.relations().at("r"), {.k = 5, .negatives_per_support = 1}, rng);
  EXPECT_EQ(task.support().size(), 5u);
  EXPECT_EQ(task.target_pos.size(), 2u);
  EXPECT_EQ(task.context.size(), 10u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(task.context[i].head, kg.entities().at("h" + std::to_string(i)));
  EXPECT_EQ(task.target_pos[0].head, kg.entities().at("h5"));
}

TEST(BuildTask, ContextSizeLawAndNegativeHeads) {
  auto kg = chain_relation(12);
  const auto r = kg.relations().at("r");
  for (std::size_t n : {1u, 2u, 4u}) {
    for (std::size_t k : {1u, 3u, 5u}) {
      Rng rng(n * 10 + k);
      auto task = build_task(kg, r, {.k = k, .negatives_per_support = n, .negatives_per_query = 2}, rng);
      ASSERT_EQ(task.context.size(), (n + 1) * k);
      std::size_t pos = 0;
      std::set<EntityId> heads;
      for (std::size_t i = 0; i < k; ++i) heads.insert(task.context[i].head);
      for (const auto& c : task.context) {
        pos += c.label;
        if (!c.label) {
          EXPECT_TRUE(heads.count(c.head));
          EXPECT_FALSE(kg.contains({c.head, r, c.tail}));
        }
      }
      EXPECT_EQ(pos, k);
      EXPECT_EQ(task.target_neg.size(), 2 * task.target_pos.size());
      for (const auto& q : task.target_neg) EXPECT_FALSE(kg.contains({q.head, r, q.tail}));
      for (const auto& q : task.target_pos)
        for (const auto& s : task.support()) EXPECT_FALSE(q == s);
    }
  }
}

TEST(BuildTask, ForcedNegativeChoice) {
  KnowledgeGraph kg;
  kg.add("a", "r", "a");
  kg.add("a", "s", "b");
  kg.add("b", "s", "a");
  const auto r = kg.relations().at("r");
  // A second triple so K=1 leaves a query.
  kg.add("b", "r", "a");
  Rng rng(3);
  auto task = build_task(kg, r, {.k = 1, .negatives_per_support = 3, .negatives_per_query = 3}, rng);
  for (const auto& c : task.context) {
    if (!c.label) {
      EXPECT_EQ(c.tail, kg.entities().at("b"));
    }
  }
  for (const auto& q : task.target_neg) EXPECT_EQ(q.tail, kg.entities().at("b"));
}

TEST(BuildTask, InsufficientData) {
  auto kg = chain_relation(5);
  Rng rng(1);
  EXPECT_THROW(build_task(kg, kg.relations().at("r"), {.k = 5}, rng), InsufficientDataError);
}

TEST(BuildTask, DeterministicForSeed) {
  auto kg = chain_relation(20);
  const auto r = kg.relations().at("r");
  TaskOptions opt{.k = 3, .negatives_per_support = 2, .negatives_per_query = 3, .max_queries = 5, .random_support = true};
  Rng a(42), b(42);
  EXPECT_EQ(build_task(kg, r, opt, a), build_task(kg, r, opt, b));
}

TEST(Categorize, Conventions) {
  auto kg = parse("a\tr\tb\nc\tr\td\na\tm\tb\na\tm\tc\na\tm\td\nb\tm\ta\nb\tm\tc\nb\tm\td\n"
                  "a\tx\tb\nc\tx\td\nb\tx\ta\nb\tx\tc\nb\tx\td\nb\tx\tx0\n");
  EXPECT_EQ(categorize_relation(kg, kg.relations().at("r")), RelationCategory::one_to_one);
  EXPECT_EQ(categorize_relation(kg, kg.relations().at("m")), RelationCategory::one_to_many);
  // Tail counts [1, 1, 4]: mean 2.0.
  EXPECT_EQ(categorize_relation(kg, kg.relations().at("x")), RelationCategory::one_to_many);
}

TEST(Embeddings, InitBounds) {
  auto kg = parse("a\tr\tb\nb\tr\tc\n");
  Rng rng(5);
  auto t = init_embeddings(kg, 4, rng);
  EXPECT_EQ(t.entity.rows, 3u);
  EXPECT_EQ(t.entity.dim, 4u);
  for (double v : t.entity.values) EXPECT_LE(std::abs(v), 3.0);
  EXPECT_THROW(init_embeddings(kg, 0, rng), std::invalid_argument);
}

TEST(Embeddings, SaveLoadBitIdentical) {
  auto kg = parse("a\tr\tb\nb\ts\tc\n");
  Rng rng(6);
  auto t = init_embeddings(kg, 5, rng);
  auto dir = temp_dir("emb");
  save_embeddings(t, kg, (dir / "e.txt").string(), (dir / "r.txt").string());
  EXPECT_EQ(load_embeddings((dir / "e.txt").string(), (dir / "r.txt").string(), kg), t);
}

TEST(Embeddings, MissingEntityNamed) {
  auto kg = parse("a\tr\tb\nb\ts\tc\n");
  auto dir = temp_dir("missing");
  {
    std::ofstream e(dir / "e.txt");
    e << "2 2\na 0 1\nb 1 0\n";
    std::ofstream r(dir / "r.txt");
    r << "2 2\nr 0 1\ns 1 1\n";
  }
  try {
    load_embeddings((dir / "e.txt").string(), (dir / "r.txt").string(), kg);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("embedding(s): c"), std::string::npos) << e.what();
  }
}

TransEOptions small_transe(std::size_t epochs) { return {.dim = 8, .epochs = epochs, .margin = 1, .lr = 0.03}; }

TEST(TransE, ChainGraphSeparatesPositives) {
  KnowledgeGraph kg;
  for (int i = 0; i < 20; ++i) kg.add("n" + std::to_string(i), "next", "n" + std::to_string(i + 1));
  Rng rng(7);
  auto res = pretrain_transe(kg, small_transe(200), rng);
  double pos = 0, neg = 0;
  std::size_t npos = 0, nneg = 0;
  for (const auto& t : kg.triples()) {
    pos += transe_distance(res.embeddings, t.head, t.relation, t.tail), ++npos;
    for (EntityId c = 0; c < kg.num_entities(); ++c)
      if (!kg.contains({t.head, t.relation, c})) neg += transe_distance(res.embeddings, t.head, t.relation, c), ++nneg;
  }
  EXPECT_LT(pos / npos, neg / nneg);
  EXPECT_LE(res.final_loss, res.initial_loss);
}

TEST(TransE, ZeroEpochsOrZeroRateKeepsInit) {
  auto kg = chain_relation(6);
  Rng a(8), b(8), c(8);
  auto init = init_embeddings(kg, 8, a);
  EXPECT_EQ(pretrain_transe(kg, small_transe(0), b).embeddings, init);
  auto opt = small_transe(10);
  opt.margin = 0;
  opt.lr = 0;
  EXPECT_EQ(pretrain_transe(kg, opt, c).embeddings, init);
}

TEST(TransE, ExcludedRelationsAreNotTrained) {
  auto kg = chain_relation(6);
  const auto r = kg.relations().at("r");
  Rng a(9), b(9);
  auto init = init_embeddings(kg, 8, a);
  auto res = pretrain_transe(kg, small_transe(20), b, {r});
  EXPECT_TRUE(std::equal(init.relation.row(r), init.relation.row(r) + 8, res.embeddings.relation.row(r)));
}

TEST(Split, JsonRoundTripAndDisjointness) {
  auto kg = parse("a\tr1\tb\na\tr2\tb\na\tr3\tb\na\tbg\tb\n");
  auto split = split_from_json(nlohmann::json{{"train", {"r1"}}, {"valid", {"r2"}}, {"test", {"r3"}}}, kg);
  EXPECT_EQ(split_to_json(split, kg)["test"][0], "r3");
  EXPECT_THROW(split_from_json(nlohmann::json{{"train", {"r1"}}, {"test", {"r1"}}}, kg), DataError);
  EXPECT_THROW(split_from_json(nlohmann::json{{"train", {"nope"}}}, kg), DataError);
}

TEST(Split, BackgroundExcludesFewShotRelations) {
  auto kg = parse("a\tr1\tb\nb\tr2\tc\nc\tr3\ta\na\tbg\tc\n");
  auto split = split_from_json(nlohmann::json{{"train", {"r1"}}, {"valid", {"r2"}}, {"test", {"r3"}}}, kg);
  const auto adj = background_adjacency(kg, split, 0, 1);
  std::size_t total = 0;
  for (const auto& edges : adj)
    for (const auto& e : edges) {
      ++total;
      EXPECT_EQ(e.relation, kg.relations().at("bg"));
    }
  EXPECT_EQ(total, 1u);
}

TEST(Split, TrainingRelationsEnrichment) {
  auto kg = chain_relation(8, 10);
  TaskSplit split;
  EXPECT_TRUE(training_relations(kg, split, 3, false).empty());
  auto enriched = training_relations(kg, split, 3, true);
  EXPECT_EQ(enriched.size(), 2u);
}

}  // namespace
}  // namespace npfkgc

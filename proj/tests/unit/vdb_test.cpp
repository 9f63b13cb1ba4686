#include "stagehand/vdb.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "paths.hpp"
#include "stagehand/data.hpp"

namespace stagehand {
namespace {

using testing::TempDir;

RunArtifact artifact(const std::string& prompt, const std::string& evaluation = "walked fine") {
  RunArtifact a;
  a.prompt = prompt;
  a.evaluation = evaluation;
  a.bundle = seed_bundle("tune");
  a.stage_metrics = {"{\"step\":0,\"eval/episode_reward\":1.0}\n"};
  a.scores = {0.5, 0.25, 0.01};
  a.created_at = "2026-01-01T00:00:00Z";
  return a;
}

TEST(Embedding, Examples) {
  EXPECT_EQ(embed("walk forward fast"), embed("walk forward fast"));
  EXPECT_NEAR(cosine(embed("walk walk"), embed("walk")), 1.0, 1e-12);
  const std::vector<double> a = {1.0, 0.0}, b = {1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)};
  EXPECT_NEAR(cosine(a, b), 0.7071, 1e-4);
}

TEST(Embedding, DisjointTokensWithoutCollisionsAreOrthogonal) {
  // Find two single tokens that land in different buckets; their embeddings share no support.
  const auto x = embed("stairs");
  for (const char* other : {"jump", "turn", "crouch", "sprint"}) {
    const auto y = embed(other);
    bool overlap = false;
    for (std::size_t i = 0; i < x.size(); ++i) overlap = overlap || (x[i] != 0.0 && y[i] != 0.0);
    if (!overlap) {
      EXPECT_EQ(cosine(x, y), 0.0);
      return;
    }
  }
  FAIL() << "every candidate collided";
}

TEST(Embedding, SymmetricAndBounded) {
  const char* texts[] = {"walk forward", "turn left slowly", "jump over the box", "walk walk walk backwards",
                         "stand still and balance"};
  for (const char* s : texts) {
    EXPECT_NEAR(cosine(embed(s), embed(s)), 1.0, 1e-12);
    for (const char* t : texts) {
      const double c = cosine(embed(s), embed(t));
      EXPECT_EQ(c, cosine(embed(t), embed(s)));
      EXPECT_GE(c, -1.0);
      EXPECT_LE(c, 1.0);
    }
  }
}

TEST(Embedding, Errors) {
  try {
    embed("  ,,, !!");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyText);
  }
  try {
    cosine({1.0}, {1.0, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
}

TEST(VectorStoreTest, SelfRetrievalIsRankOne) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir.path());
  store.add_run(artifact("teach the robot to walk forward on flat ground"));
  const RunArtifact target = artifact("climb a low step while keeping balance");
  const std::string id = store.add_run(target);
  store.add_run(artifact("turn in place at a slow yaw rate"));
  EXPECT_EQ(store.size(), 3u);
  const auto hits = store.query_topk(embedding_text(target), 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].id, id);
  EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
  EXPECT_GE(hits[0].score, hits[1].score);
  EXPECT_GE(hits[1].score, hits[2].score);
}

TEST(VectorStoreTest, SizeGrowsByOneAndDuplicatesRejected) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir.path());
  RunArtifact a = artifact("walk");
  a.id = "run-fixed";
  store.add_run(a);
  EXPECT_EQ(store.size(), 1u);
  try {
    store.add_run(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
  }
  EXPECT_EQ(store.size(), 1u);
}

TEST(VectorStoreTest, InvalidBundleRejected) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir.path());
  RunArtifact a = artifact("walk");
  a.bundle.files.erase("rewards/generated_reward_stage1.yaml");
  try {
    store.add_run(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArtifact);
  }
  EXPECT_EQ(store.size(), 0u);
}

TEST(VectorStoreTest, PersistenceRoundTrip) {
  TempDir dir;
  std::vector<QueryHit> before;
  RunArtifact stored = artifact("walk sideways with a narrow stance", "lateral drift was small");
  std::string id;
  {
    VectorStore store = VectorStore::open(dir.path());
    id = store.add_run(stored);
    store.add_run(artifact("walk forward and stop"));
    before = store.query_topk("walk sideways", 5);
  }
  VectorStore reopened = VectorStore::open(dir.path());
  EXPECT_EQ(reopened.size(), 2u);
  const auto after = reopened.query_topk("walk sideways", 5);
  ASSERT_EQ(after.size(), before.size());
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_EQ(after[i].id, before[i].id);
    EXPECT_EQ(after[i].score, before[i].score);
  }
  const RunArtifact back = reopened.load_run(id);
  EXPECT_EQ(back.prompt, stored.prompt);
  EXPECT_EQ(back.evaluation, stored.evaluation);
  EXPECT_EQ(back.bundle.files, stored.bundle.files);
  EXPECT_EQ(back.bundle.workflow_path, stored.bundle.workflow_path);
  EXPECT_EQ(back.stage_metrics, stored.stage_metrics);
  EXPECT_EQ(back.scores, stored.scores);
  EXPECT_EQ(back.schema_version, kSchemaVersion);
}

TEST(VectorStoreTest, KLargerThanStoreReturnsAllSorted) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir.path());
  for (const char* p : {"walk", "walk fast", "run", "turn left"}) store.add_run(artifact(p));
  const auto hits = store.query_topk("walk fast", 10);
  EXPECT_EQ(hits.size(), 4u);
  EXPECT_TRUE(std::is_sorted(hits.begin(), hits.end(),
                             [](const QueryHit& a, const QueryHit& b) { return a.score > b.score; }));
  EXPECT_THROW(store.query_topk("walk", 0), Error);
}

TEST(VectorStoreTest, RankingIndependentOfInsertionOrder) {
  const std::vector<std::string> prompts = {"walk forward slowly", "turn right quickly", "jump over a gap",
                                            "stand on one leg"};
  std::vector<std::vector<std::string>> rankings;
  for (int order = 0; order < 2; ++order) {
    TempDir dir;
    VectorStore store = VectorStore::open(dir.path());
    std::vector<std::string> ps = prompts;
    if (order == 1) std::reverse(ps.begin(), ps.end());
    for (const auto& p : ps) {
      RunArtifact a = artifact(p, p);
      a.id = "run-" + std::to_string(std::hash<std::string>{}(p) % 100000);
      store.add_run(a);
    }
    // The two unrelated prompts tie at 0, so only the top two have distinct scores.
    std::vector<std::string> ids;
    for (const auto& h : store.query_topk("walk forward quickly", 2)) ids.push_back(h.id);
    rankings.push_back(ids);
  }
  EXPECT_EQ(rankings[0], rankings[1]);
}

TEST(VectorStoreTest, EmptyStoreQueryFails) {
  TempDir dir;
  const VectorStore store = VectorStore::open(dir.path());
  try {
    store.query_topk("walk", 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyStore);
  }
}

}  // namespace
}  // namespace stagehand

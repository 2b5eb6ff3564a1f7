#include <gtest/gtest.h>

#include <random>

#include "cased/metrics.hpp"
#include "cased/mock_provider.hpp"
#include "metric_oracles.hpp"

using namespace cased;
using oracles::map_of;

namespace {

template <typename Fn>
void expect_error(ErrorKind kind, Fn&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

double hji(const SegPairBatch& b) { return segmentation_jaccard(b, MetricMode::Hard); }

}  // namespace

// ---- classification ----

TEST(SemanticIou, WorkedExamples) {
  EXPECT_DOUBLE_EQ(semantic_iou("granny smith apple", "apple"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(semantic_iou("cat", "cat"), 1.0);
  EXPECT_DOUBLE_EQ(semantic_iou("granny smith", "apple"), 0.0);
  EXPECT_DOUBLE_EQ(semantic_iou("Golden-Retrievers", "golden retriever"), 1.0);
  expect_error(ErrorKind::InvalidArgument, [] { semantic_iou("", "cat"); });
  expect_error(ErrorKind::InvalidArgument, [] { semantic_iou("cat", " - "); });
}

TEST(SemanticIou, SymmetricAndOneIffEqualSets) {
  const std::vector<std::string> pool{"red apple", "apple", "green apple tree", "tree", "red tree", "apples red",
                                      "sky", "blue sky", "sky blue"};
  for (const auto& a : pool) {
    for (const auto& b : pool) {
      EXPECT_EQ(semantic_iou(a, b), semantic_iou(b, a));
      const auto wa = label_words(a), wb = label_words(b);
      const bool same = std::set<std::string>(wa.begin(), wa.end()) == std::set<std::string>(wb.begin(), wb.end());
      EXPECT_EQ(semantic_iou(a, b) == 1.0, same) << a << " / " << b;
    }
  }
}

TEST(SemanticSimilarity, ExactAndEmbeddingKernels) {
  ExactMatchKernel exact;
  EXPECT_EQ(semantic_similarity("cat", "cat", exact), 1.0);
  EXPECT_EQ(semantic_similarity("cat", "dog", exact), 0.0);
  EXPECT_EQ(semantic_similarity("Cats", "cat", exact), 1.0);
  expect_error(ErrorKind::InvalidArgument, [&] { semantic_similarity("", "cat", exact); });

  MockProvider mock(3, 32);
  EmbeddingKernel emb(mock);
  for (const std::string w : {"cat", "a small dog", "granny smith apple", "ünïcode"}) {
    EXPECT_GE(semantic_similarity(w, w, emb), 0.999);
  }
  EXPECT_EQ(emb("cat", "dog"), emb("dog", "cat"));
}

TEST(LabelStandardization, Examples) {
  EXPECT_EQ(standardize_label("Golden  Retrievers!"), "golden retriever");
  EXPECT_EQ(standardize_label("cafés"), "café");
}

TEST(ClusterAccuracy, WorkedExamples) {
  EXPECT_DOUBLE_EQ(cluster_accuracy({{"a", "x"}, {"a", "x"}, {"b", "y"}}), 1.0);
  EXPECT_DOUBLE_EQ(cluster_accuracy({{"a", "x"}, {"b", "x"}}), 1.0);
  EXPECT_DOUBLE_EQ(cluster_accuracy({{"a", "x"}, {"a", "y"}}), 0.5);
  expect_error(ErrorKind::EmptyList, [] { cluster_accuracy({}); });
}

TEST(ClusterAccuracy, MatchesBruteForceOracle) {
  std::mt19937_64 rng(1);
  const std::vector<std::string> preds{"cat", "dog", "bird", "fish", "cow"};
  const std::vector<std::string> gts{"x", "y", "z", "w"};
  for (int t = 0; t < 1000; ++t) {
    std::uniform_int_distribution<std::size_t> n(1, 30), p(0, preds.size() - 1), g(0, gts.size() - 1);
    LabelPairBatch batch;
    for (std::size_t i = n(rng); i > 0; --i) batch.push_back({preds[p(rng)], gts[g(rng)]});
    ASSERT_DOUBLE_EQ(cluster_accuracy(batch), oracles::cluster_accuracy(batch));
    std::shuffle(batch.begin(), batch.end(), rng);
    ASSERT_DOUBLE_EQ(cluster_accuracy(batch), oracles::cluster_accuracy(batch));
  }
}

TEST(ClusterAccuracy, OneWheneverPredictionDeterminesGt) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    std::uniform_int_distribution<int> pick(0, 9), to_gt(0, 3);
    std::map<int, int> f;
    for (int i = 0; i < 10; ++i) f[i] = to_gt(rng);
    LabelPairBatch batch;
    for (int i = 0; i < 25; ++i) {
      const int p = pick(rng);
      batch.push_back({"p" + std::to_string(p), "g" + std::to_string(f[p])});
    }
    EXPECT_DOUBLE_EQ(cluster_accuracy(batch), 1.0);
  }
}

TEST(EvaluateClassification, ReportContents) {
  ExactMatchKernel exact;
  const auto r = evaluate_classification({{"cat", "cat"}, {"cat", "dog"}, {"red apple", "apple"}}, exact);
  EXPECT_DOUBLE_EQ(r.at("cluster_accuracy"), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.at("semantic_similarity"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.at("semantic_iou"), (1.0 + 0.0 + 0.5) / 3.0);
  EXPECT_EQ(r.counts.at("samples"), 3u);
  EXPECT_EQ(r.counts.at("clusters"), 2u);
  EXPECT_DOUBLE_EQ(r.per_class.at("cluster_accuracy").at("cat"), 1.0);
  EXPECT_DOUBLE_EQ(r.per_class.at("cluster_accuracy").at("dog"), 0.0);
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("metrics") && j.contains("per_class") && j.contains("counts"));
}

// ---- segmentation ----

TEST(SegmentationJaccard, WorkedExamples) {
  const SegPairBatch b{{map_of(2, 2, {"cat", "cat", "cat", "cat"}), map_of(2, 2, {"cat", "cat", "dog", "dog"})}};
  EXPECT_DOUBLE_EQ(hji(b), 0.25);
  const auto per_class = segmentation_jaccard_per_class(b, MetricMode::Hard);
  EXPECT_DOUBLE_EQ(per_class.at("cat"), 0.5);
  EXPECT_DOUBLE_EQ(per_class.at("dog"), 0.0);
  const SegPairBatch same{{map_of(2, 2, {"cat", "sky", "dog", "dog"}), map_of(2, 2, {"cat", "sky", "dog", "dog"})}};
  EXPECT_DOUBLE_EQ(hji(same), 1.0);
  EXPECT_DOUBLE_EQ(segmentation_recall(same, MetricMode::Hard), 1.0);
}

TEST(SegmentationJaccard, IgnorePixelsAreExcluded) {
  // The ignored gt pixel predicted "cat" does not enlarge cat's union.
  const SegPairBatch b{{map_of(1, 3, {"cat", "cat", "dog"}), map_of(1, 3, {"cat", "-", "dog"})}};
  EXPECT_DOUBLE_EQ(hji(b), 1.0);
  // An ignored prediction gives no credit but still counts in the gt class.
  const SegPairBatch c{{map_of(1, 2, {"cat", "-"}), map_of(1, 2, {"cat", "cat"})}};
  EXPECT_DOUBLE_EQ(hji(c), 0.5);
}

TEST(SegmentationJaccard, StandardizesLabels) {
  const SegPairBatch b{{map_of(1, 2, {"Cats", "DOG"}), map_of(1, 2, {"cat", "dogs"})}};
  EXPECT_DOUBLE_EQ(hji(b), 1.0);
}

TEST(SegmentationJaccard, Errors) {
  const SegPairBatch b{{map_of(1, 2, {"a", "b"}), map_of(2, 1, {"a", "b"})}};
  expect_error(ErrorKind::DimensionMismatch, [&] { hji(b); });
  expect_error(ErrorKind::EmptyList, [] { hji({}); });
  const SegPairBatch ok{{map_of(1, 1, {"cat"}), map_of(1, 1, {"cat"})}};
  expect_error(ErrorKind::InvalidArgument, [&] { segmentation_jaccard(ok, MetricMode::Soft); });
}

TEST(SegmentationRecall, WorkedExamples) {
  const SegPairBatch b{{map_of(2, 2, {"cat", "cat", "cat", "cat"}), map_of(2, 2, {"cat", "cat", "dog", "dog"})}};
  EXPECT_DOUBLE_EQ(segmentation_recall(b, MetricMode::Hard), 0.5);
  ExactMatchKernel exact;
  EXPECT_DOUBLE_EQ(segmentation_recall(b, MetricMode::Soft, &exact), 0.5);
  // Dataset pooling weights by (image, class) instances.
  const SegPairBatch two{b[0], {map_of(1, 1, {"sky"}), map_of(1, 1, {"sky"})}};
  EXPECT_DOUBLE_EQ(segmentation_recall(two, MetricMode::Hard, nullptr, Pooling::PerImage), 0.75);
  EXPECT_DOUBLE_EQ(segmentation_recall(two, MetricMode::Hard, nullptr, Pooling::Dataset), 2.0 / 3.0);
}

TEST(SoftMetrics, KernelCreditAndFloor) {
  // A kernel that gives "kitten" partial credit against "cat".
  struct Table : SimilarityKernel {
    std::string name() const override { return "table"; }
    double operator()(const std::string& a, const std::string& b) override {
      if (a == b) return 1.0;
      if ((a == "kitten" && b == "cat") || (a == "cat" && b == "kitten")) return 0.5;
      return -0.2;
    }
  } k;
  const SegPairBatch b{{map_of(1, 4, {"kitten", "kitten", "cat", "sky"}), map_of(1, 4, {"cat", "cat", "cat", "dog"})}};
  // cat: (0.5 + 0.5 + 1) / 3; dog: -0.2 / 1
  EXPECT_NEAR(segmentation_jaccard(b, MetricMode::Soft, &k), (2.0 / 3.0 - 0.2) / 2.0, 1e-12);
  // recall: cat max 1, dog max(-0.2) floored at 0
  EXPECT_NEAR(segmentation_recall(b, MetricMode::Soft, &k), 0.5, 1e-12);
}

TEST(SoftMetrics, ExactKernelEqualsHardOnRandomMaps) {
  ExactMatchKernel exact;
  std::mt19937_64 rng(3);
  for (int t = 0; t < 1000; ++t) {
    SegPairBatch batch{oracles::random_pair(rng, 4, 4, 4, 0.1), oracles::random_pair(rng, 4, 4, 4, 0.0)};
    for (auto pooling : {Pooling::Dataset, Pooling::PerImage}) {
      ASSERT_DOUBLE_EQ(segmentation_jaccard(batch, MetricMode::Soft, &exact, pooling),
                       segmentation_jaccard(batch, MetricMode::Hard, nullptr, pooling));
      ASSERT_DOUBLE_EQ(segmentation_recall(batch, MetricMode::Soft, &exact, pooling),
                       segmentation_recall(batch, MetricMode::Hard, nullptr, pooling));
    }
  }
}

TEST(SegmentationMetrics, BatchPermutationInvariant) {
  ExactMatchKernel exact;
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    SegPairBatch batch;
    for (int i = 0; i < 4; ++i) batch.push_back(oracles::random_pair(rng, 3, 4, 3, 0.1));
    const auto a = evaluate_segmentation(batch, exact).to_json().dump();
    std::shuffle(batch.begin(), batch.end(), rng);
    const auto r = evaluate_segmentation(batch, exact);
    ASSERT_EQ(a, r.to_json().dump());
    for (const auto& [name, v] : r.scalars) {
      EXPECT_GE(v, 0.0) << name;
      EXPECT_LE(v, 1.0) << name;
    }
  }
}

TEST(SegmentationMetrics, HardMetricsMatchOracleOnRandomBatches) {
  ExactMatchKernel exact;
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    SegPairBatch batch;
    for (int i = 0; i < 3; ++i) batch.push_back(oracles::random_pair(rng, 3, 3, 4, 0.15));
    for (auto pooling : {Pooling::Dataset, Pooling::PerImage}) {
      ASSERT_NEAR(segmentation_jaccard(batch, MetricMode::Hard, nullptr, pooling),
                  oracles::jaccard(batch, pooling), 1e-12);
      ASSERT_NEAR(segmentation_recall(batch, MetricMode::Hard, nullptr, pooling), oracles::recall(batch, pooling),
                  1e-12);
      ASSERT_NEAR(overlap_jaccard(batch, pooling), oracles::overlap_jaccard(batch, pooling), 1e-12);
      ASSERT_NEAR(nearest_jaccard(batch, exact, pooling), oracles::nearest_jaccard_exact(batch, pooling), 1e-12);
    }
  }
}

TEST(RemapOverlap, PartsMergeIntoWhole) {
  // gt: person on the left 2 columns, sky on the right.
  const auto gt = map_of(3, 3, {"person", "person", "sky", "person", "person", "sky", "person", "person", "sky"});
  const auto pred = map_of(3, 3, {"head", "head", "sky", "shirt", "shirt", "sky", "shirt", "shirt", "sky"});
  const auto remapped = remap_overlap(pred, gt);
  EXPECT_EQ(remapped.to_strings(), gt.to_strings());
  const SegPairBatch b{{pred, gt}};
  EXPECT_DOUBLE_EQ(overlap_jaccard(b), 1.0);
  EXPECT_DOUBLE_EQ(hji(b), 0.5);
}

TEST(RemapOverlap, MajorityAndTiesAndIgnore) {
  const auto gt = map_of(1, 5, {"cat", "cat", "cat", "dog", "-"});
  const auto pred = map_of(1, 5, {"x", "x", "x", "x", "y"});
  const auto r = remap_overlap(pred, gt);
  EXPECT_EQ(r.to_strings(), (std::vector<std::string>{"cat", "cat", "cat", "cat", "y"}));  // y overlaps nothing
  const auto tie = remap_overlap(map_of(1, 2, {"x", "x"}), map_of(1, 2, {"dog", "cat"}));
  EXPECT_EQ(tie.to_strings(), (std::vector<std::string>{"cat", "cat"}));
  const auto same = map_of(2, 2, {"a", "b", "b", "c"});
  EXPECT_EQ(remap_overlap(same, same).to_strings(), same.to_strings());
}

TEST(OverlapJaccard, CanFallBelowHardJaccard) {
  // Remapping merges a mostly-wrong label into the majority class, which can
  // lose a correct pixel for a small class.
  const SegPairBatch b{{map_of(1, 6, {"a", "a", "a", "b", "b", "b"}), map_of(1, 6, {"a", "b", "b", "b", "b", "b"})}};
  EXPECT_NEAR(hji(b), (1.0 / 3.0 + 3.0 / 5.0) / 2.0, 1e-12);
  EXPECT_NEAR(overlap_jaccard(b), (0.0 + 5.0 / 6.0) / 2.0, 1e-12);
  // Smallest case, through the tie rule.
  const SegPairBatch tie{{map_of(1, 3, {"a", "b", "b"}), map_of(1, 3, {"a", "a", "b"})}};
  EXPECT_DOUBLE_EQ(hji(tie), 0.5);
  EXPECT_NEAR(overlap_jaccard(tie), 1.0 / 3.0, 1e-12);
}

TEST(OverlapJaccard, IdentityWhenPredEqualsGt) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    auto p = oracles::random_pair(rng, 4, 4, 3, 0.0);
    const SegPairBatch b{{p.ground_truth, p.ground_truth}};
    EXPECT_DOUBLE_EQ(overlap_jaccard(b), hji(b));
    EXPECT_DOUBLE_EQ(hji(b), 1.0);
  }
}

TEST(RemapNearest, ExactKernelAndEmbeddingKernel) {
  ExactMatchKernel exact;
  const auto pred = map_of(1, 3, {"cat", "zebra", "dog"});
  EXPECT_EQ(remap_nearest(pred, {"dog", "cat"}, exact).to_strings(),
            (std::vector<std::string>{"cat", "cat", "dog"}));  // zebra ties at 0 -> "cat"
  expect_error(ErrorKind::EmptyList, [&] { remap_nearest(pred, {}, exact); });

  MockProviderConfig cfg;
  cfg.seed = 5;
  cfg.dim = 64;
  cfg.concepts = {{"couch", {"sofa"}, std::nullopt}};
  MockProvider mock(cfg);
  EmbeddingKernel emb(mock);
  ASSERT_GT(emb("sofa", "couch"), emb("sofa", "tv"));
  EXPECT_EQ(remap_nearest(map_of(1, 1, {"sofa"}), {"couch", "tv"}, emb).to_strings(),
            std::vector<std::string>{"couch"});
}

TEST(NearestJaccard, UsesPerImageGtLabels) {
  ExactMatchKernel exact;
  // "zebra" is remapped to the smallest label of its own image's gt.
  const SegPairBatch b{{map_of(1, 2, {"zebra", "sky"}), map_of(1, 2, {"grass", "sky"})},
                       {map_of(1, 2, {"zebra", "cat"}), map_of(1, 2, {"cat", "cat"})}};
  EXPECT_DOUBLE_EQ(nearest_jaccard(b, exact), 1.0);
  EXPECT_LT(hji(b), 1.0);
}

TEST(EvaluateSegmentation, IdenticalPredictionsScoreOne) {
  ExactMatchKernel exact;
  std::mt19937_64 rng(7);
  SegPairBatch b;
  for (int i = 0; i < 5; ++i) {
    auto p = oracles::random_pair(rng, 5, 5, 4, 0.1);
    b.push_back({p.ground_truth, p.ground_truth});
  }
  const auto r = evaluate_segmentation(b, exact);
  for (const char* m : {"HJI", "SJI", "NJI", "OJI", "HR", "SR"}) EXPECT_DOUBLE_EQ(r.at(m), 1.0) << m;
  EXPECT_EQ(r.counts.at("images"), 5u);
}

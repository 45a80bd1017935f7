#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "tsjm/bgm.hpp"
#include "tsjm/errors.hpp"
#include "tsjm/episodic.hpp"
#include "tsjm/otm.hpp"

using namespace tsjm;

namespace {

FeatureStore small_store(std::size_t classes, std::size_t per_class, std::uint64_t seed, double noise = 0.3) {
    SynthConfig cfg;
    cfg.num_classes = classes;
    cfg.videos_per_class = per_class;
    cfg.frames = 6;
    cfg.dim = 12;
    cfg.num_subactions = 3;
    cfg.noise_sigma = noise;
    cfg.seed = seed;
    return gen_synthetic(cfg);
}

FeatureStore noise_store(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<VideoRecord> recs;
    std::uint32_t id = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t v = 0; v < per_class; ++v) {
            Matrix rgb(6, 8), flow(6, 8);
            for (double& x : rgb.flat()) x = normal(rng);
            for (double& x : flow.flat()) x = normal(rng);
            recs.push_back({id++, static_cast<std::uint32_t>(c), {rgb, Modality::Rgb}, {flow, Modality::Flow}});
        }
    }
    return make_store(std::move(recs));
}

BranchScores scores_of(std::vector<double> a, std::vector<double> b, std::vector<double> c, std::vector<double> d) {
    BranchScores s;
    s.by_branch = {std::move(a), std::move(b), std::move(c), std::move(d)};
    return s;
}

std::vector<double> znorm(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    std::vector<double> out;
    for (double x : v) out.push_back((x - mean) / sd);
    return out;
}

}  // namespace

TEST(SampleEpisode, ForcedSelectionWhenWayEqualsClasses) {
    const auto store = small_store(2, 2, 1);
    const Episode ep = sample_episode(store, 2, 1, 1, 9);
    std::set<std::uint32_t> classes(ep.classes.begin(), ep.classes.end());
    EXPECT_EQ(classes, (std::set<std::uint32_t>{0, 1}));
    for (std::size_t c = 0; c < 2; ++c) {
        const auto* s = ep.support[c][0];
        const auto q = std::find_if(ep.queries.begin(), ep.queries.end(), [&](const auto& x) { return x.label == c; });
        ASSERT_NE(q, ep.queries.end());
        EXPECT_NE(s, q->record);
        EXPECT_EQ(s->class_id, q->record->class_id);
    }
}

TEST(SampleEpisode, InfeasibleRequestIsDomainError) {
    const auto store = small_store(4, 2, 1);
    EXPECT_THROW(sample_episode(store, 5, 1, 1, 0), DomainError);
    EXPECT_THROW(sample_episode(store, 2, 2, 1, 0), DomainError);
    EXPECT_THROW(sample_episode(store, 0, 1, 1, 0), std::invalid_argument);
}

TEST(SampleEpisode, DeterministicGivenSeed) {
    const auto store = small_store(10, 5, 2);
    const Episode a = sample_episode(store, 5, 1, 2, 77);
    const Episode b = sample_episode(store, 5, 1, 2, 77);
    EXPECT_EQ(a.classes, b.classes);
    EXPECT_EQ(a.support, b.support);
    ASSERT_EQ(a.queries.size(), b.queries.size());
    for (std::size_t i = 0; i < a.queries.size(); ++i) EXPECT_EQ(a.queries[i].record, b.queries[i].record);
}

TEST(SampleEpisode, FiveWayOneShotShape) {
    const auto store = small_store(24, 4, 3);
    const Episode ep = sample_episode(store, 5, 1, 1, 4);
    EXPECT_EQ(ep.support.size(), 5u);
    for (const auto& s : ep.support) EXPECT_EQ(s.size(), 1u);
    EXPECT_EQ(ep.queries.size(), 5u);
}

TEST(SampleEpisode, InvariantsHoldForManySeeds) {
    const auto store = small_store(12, 6, 5);
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        const std::size_t way = 2 + seed % 5, shot = 1 + seed % 3, qpc = 1 + seed % 2;
        const Episode ep = sample_episode(store, way, shot, qpc, seed);
        ASSERT_EQ(ep.classes.size(), way);
        ASSERT_EQ(std::set<std::uint32_t>(ep.classes.begin(), ep.classes.end()).size(), way);
        ASSERT_EQ(ep.queries.size(), way * qpc);
        std::set<const VideoRecord*> used;
        for (std::size_t c = 0; c < way; ++c) {
            ASSERT_EQ(ep.support[c].size(), shot);
            for (const auto* r : ep.support[c]) {
                ASSERT_EQ(r->class_id, ep.classes[c]);
                ASSERT_TRUE(used.insert(r).second);
            }
        }
        for (const auto& q : ep.queries) {
            ASSERT_LT(q.label, way);
            ASSERT_EQ(q.record->class_id, ep.classes[q.label]);
            ASSERT_TRUE(used.insert(q.record).second);  // disjoint from supports and other queries
        }
    }
}

TEST(PrototypeScores, SelfMatchDominates) {
    const auto store = small_store(5, 3, 6);
    Episode ep = sample_episode(store, 5, 1, 1, 1);
    for (std::size_t c = 0; c < 5; ++c) {
        const auto s = class_prototype_scores(ep, nullptr, *ep.support[c][0]);
        for (const auto& v : s.by_branch) EXPECT_EQ(classify(v), c);
        EXPECT_NEAR(s[Branch::OtaRgb][c], 0.0, 1e-12);
        EXPECT_NEAR(s[Branch::KmRgb][c], 6.0, 1e-12);  // T cosines of 1
    }
}

TEST(PrototypeScores, ConstantFlowGivesConstantFlowBranches) {
    auto store = small_store(5, 2, 7);
    for (auto& r : store.records) {
        for (double& v : r.flow.frames.flat()) v = 1.0;
    }
    const Episode ep = sample_episode(store, 5, 1, 1, 2);
    const auto s = class_prototype_scores(ep, nullptr, *ep.queries[0].record);
    for (Branch b : {Branch::OtaFlow, Branch::KmFlow}) {
        for (double v : s[b]) EXPECT_NEAR(v, s[b][0], 1e-12);
    }
    EXPECT_EQ(fuse_scores(s, FusionWeights::one_hot(Branch::OtaFlow)), std::vector<double>(5, 0.0));
}

TEST(PrototypeScores, MatchesIndependentComposition) {
    const auto store = small_store(6, 4, 8);
    const Episode ep = sample_episode(store, 3, 2, 1, 3);
    const VideoRecord& q = *ep.queries[1].record;
    const auto s = class_prototype_scores(ep, nullptr, q);
    for (std::size_t c = 0; c < 3; ++c) {
        double ota_r = 0, ota_f = 0, km_r = 0, km_f = 0;
        for (const auto* sup : ep.support[c]) {
            ota_r += dtw(frame_distance_matrix(sup->rgb, q.rgb)).total_cost;
            ota_f += dtw(frame_distance_matrix(sup->flow, q.flow)).total_cost;
            km_r += km_match(frame_similarity_matrix(sup->rgb, q.rgb)).total_weight;
            km_f += km_match(frame_similarity_matrix(sup->flow, q.flow)).total_weight;
        }
        EXPECT_NEAR(s[Branch::OtaRgb][c], -ota_r / 2, 1e-10);
        EXPECT_NEAR(s[Branch::OtaFlow][c], -ota_f / 2, 1e-10);
        EXPECT_NEAR(s[Branch::KmRgb][c], km_r / 2, 1e-10);
        EXPECT_NEAR(s[Branch::KmFlow][c], km_f / 2, 1e-10);
    }
}

TEST(PrototypeScores, IdentityAdaptersChangeNothing) {
    const auto store = small_store(5, 2, 9);
    const Episode ep = sample_episode(store, 5, 1, 1, 5);
    const AdapterPair id{AdapterParams::zeros(12, 3), AdapterParams::zeros(12, 3)};
    const auto a = class_prototype_scores(ep, nullptr, *ep.queries[2].record);
    const auto b = class_prototype_scores(ep, &id, *ep.queries[2].record);
    for (std::size_t i = 0; i < kNumBranches; ++i) EXPECT_EQ(a.by_branch[i], b.by_branch[i]);
}

TEST(FuseScores, SingleBranchSelection) {
    const auto s = scores_of({0.1, 0.9, 0.3}, {5, 1, 2}, {1, 2, 3}, {3, 2, 1});
    const auto f = fuse_scores(s, FusionWeights::one_hot(Branch::OtaRgb));
    EXPECT_EQ(classify(f), 1u);
    const auto z = znorm({0.1, 0.9, 0.3});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f[i], z[i], 1e-12);
}

TEST(FuseScores, IdenticalInputsAreConvexInvariant) {
    const std::vector<double> v{0.4, -1.0, 2.5, 0.0};
    const auto s = scores_of(v, v, {0, 0, 0, 1}, {1, 0, 0, 0});
    FusionWeights half;
    half.w = {0.5, 0.5, 0.0, 0.0};
    const auto a = fuse_scores(s, half);
    const auto b = fuse_scores(s, FusionWeights::one_hot(Branch::OtaRgb));
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(FuseScores, HandComputedWeightedSum) {
    const auto s = scores_of({1, 2, 3}, {-2, 0, 2}, {0, 0, 1}, {7, 7, 7});
    FusionWeights w;
    w.w = {0.1, 0.2, 0.3, 0.4};
    const auto f = fuse_scores(s, w);
    // z({1,2,3}) = z({-2,0,2}) = {-a, 0, a}, z({0,0,1}) = {-b, -b, 2b}, constant -> 0
    const double a = std::sqrt(1.5), b = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(f[0], -0.3 * a - 0.3 * b, 1e-12);
    EXPECT_NEAR(f[1], -0.3 * b, 1e-12);
    EXPECT_NEAR(f[2], 0.3 * a + 0.6 * b, 1e-12);
}

TEST(FuseScores, RejectsBadWeights) {
    const auto s = scores_of({1, 2}, {1, 2}, {1, 2}, {1, 2});
    FusionWeights w;
    w.w = {0, 0, 0, 0};
    EXPECT_THROW(fuse_scores(s, w), std::invalid_argument);
    w.w = {1, -1, 0, 0};
    EXPECT_THROW(fuse_scores(s, w), std::invalid_argument);
    EXPECT_THROW(fuse_scores(scores_of({1, 2}, {1}, {1, 2}, {1, 2}), FusionWeights{}), std::invalid_argument);
}

TEST(FuseScores, PositiveWeightScalingKeepsArgmax) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.01, 10.0);
    for (int i = 0; i < 1000; ++i) {
        BranchScores s;
        for (auto& v : s.by_branch) {
            v.resize(5);
            for (double& x : v) x = u(rng);
        }
        FusionWeights w;
        for (double& x : w.w) x = pos(rng);
        FusionWeights scaled = w;
        const double c = pos(rng);
        for (double& x : scaled.w) x *= c;
        EXPECT_EQ(classify(fuse_scores(s, w)), classify(fuse_scores(s, scaled)));
    }
}

TEST(Classify, LowestIndexOnTies) {
    EXPECT_EQ(classify(std::vector<double>{1, 3, 3, 2}), 1u);
    EXPECT_EQ(classify(std::vector<double>(4, 0.0)), 0u);
    EXPECT_THROW(classify(std::vector<double>{}), std::invalid_argument);
}

TEST(Evaluate, SingleBranchWeightsMatchBranchAccuracy) {
    const auto store = small_store(10, 4, 10, 0.6);
    EvalConfig cfg;
    cfg.episodes = 100;
    cfg.seed = 4;
    for (std::size_t b = 0; b < kNumBranches; ++b) {
        cfg.weights = FusionWeights::one_hot(static_cast<Branch>(b));
        const auto r = evaluate(store, cfg);
        EXPECT_EQ(r.mean_accuracy, r.branch_accuracy[b]);
    }
}

TEST(Evaluate, IdenticalAcrossThreadCounts) {
    const auto store = small_store(10, 4, 11, 0.6);
    EvalConfig cfg;
    cfg.episodes = 200;
    cfg.seed = 5;
    const auto one = evaluate(store, cfg);
    cfg.threads = 4;
    const auto four = evaluate(store, cfg);
    EXPECT_EQ(one.mean_accuracy, four.mean_accuracy);
    EXPECT_EQ(one.ci95_halfwidth, four.ci95_halfwidth);
    EXPECT_EQ(one.branch_accuracy, four.branch_accuracy);
}

TEST(Evaluate, NoiselessStoreIsPerfect) {
    SynthConfig sc;
    sc.num_classes = 8;
    sc.videos_per_class = 3;
    sc.noise_sigma = 0.0;
    sc.permute_subactions = false;
    const auto store = gen_synthetic(sc);
    EvalConfig cfg;
    cfg.episodes = 50;
    const auto r = evaluate(store, cfg);
    EXPECT_EQ(r.mean_accuracy, 1.0);
    EXPECT_EQ(r.ci95_halfwidth, 0.0);
}

TEST(Evaluate, PureNoiseIsNearChance) {
    const auto store = noise_store(24, 20, 14);
    EvalConfig cfg;
    cfg.episodes = 1000;
    cfg.seed = 6;
    const auto r = evaluate(store, cfg);
    // A 95% interval misses one run in twenty; two half-widths keeps this stable.
    EXPECT_LE(std::abs(r.mean_accuracy - 0.2), 2.0 * r.ci95_halfwidth);
}

TEST(Evaluate, ConfigErrors) {
    const auto store = small_store(4, 2, 15);
    EvalConfig cfg;
    EXPECT_THROW(evaluate(store, cfg), DomainError);
    cfg.way = 2;
    cfg.episodes = 0;
    EXPECT_THROW(evaluate(store, cfg), std::invalid_argument);
}

TEST(Evaluate, DtwOnlyBeatsChanceOnPermutedWarpedStore) {
    SynthConfig sc;
    sc.num_classes = 5;
    sc.videos_per_class = 10;
    sc.frames = 8;
    sc.dim = 16;
    sc.num_subactions = 3;
    sc.warp_min = 0.5;
    sc.warp_max = 2.0;
    sc.permute_subactions = true;
    sc.noise_sigma = 0.1;
    sc.seed = 7;
    EvalConfig cfg;
    cfg.weights = FusionWeights::one_hot(Branch::OtaRgb);
    cfg.episodes = 500;
    const auto r = evaluate(gen_synthetic(sc), cfg);
    EXPECT_GT(r.mean_accuracy - r.ci95_halfwidth, 0.2);
}

TEST(EpisodeSeed, DistinctAcrossIndices) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(episode_seed(42, i));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_NE(episode_seed(1, 0), episode_seed(2, 0));
}

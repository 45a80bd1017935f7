#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "../support/oracles.hpp"
#include "tsjm/bgm.hpp"

using namespace tsjm;

namespace {

CostMatrix sim(Matrix m) { return {std::move(m), CostKind::Similarity}; }

void expect_bijection(const PerfectMatching& pm, const CostMatrix& w) {
    std::vector<std::size_t> sorted = pm.assignment;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
    double total = 0.0;
    for (std::size_t l = 0; l < pm.assignment.size(); ++l) total += w(l, pm.assignment[l]);
    EXPECT_NEAR(pm.total_weight, total, 1e-9);
}

}  // namespace

TEST(KmMatch, Identity) {
    const auto w = sim(Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    const auto pm = km_match(w);
    EXPECT_EQ(pm.assignment, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_DOUBLE_EQ(pm.total_weight, 3.0);
}

TEST(KmMatch, AntiDiagonal) {
    const auto pm = km_match(sim(Matrix(2, 2, {0, 1, 1, 0})));
    EXPECT_EQ(pm.assignment, (std::vector<std::size_t>{1, 0}));
    EXPECT_DOUBLE_EQ(pm.total_weight, 2.0);
}

TEST(KmMatch, NonSquareRejected) {
    EXPECT_THROW(km_match(sim(Matrix(2, 3, 0.0))), std::invalid_argument);
}

TEST(KmMatch, SingleCell) {
    const auto pm = km_match(sim(Matrix(1, 1, {-0.4})));
    EXPECT_EQ(pm.assignment, std::vector<std::size_t>{0});
    EXPECT_DOUBLE_EQ(pm.total_weight, -0.4);
}

TEST(KmMatch, MatchesPermutationEnumeration) {
    std::mt19937_64 rng(41);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = 1 + rng() % 7;
        const auto w = sim(oracle::random_matrix(n, n, rng));
        const auto pm = km_match(w);
        expect_bijection(pm, w);
        EXPECT_NEAR(pm.total_weight, oracle::brute_force_assignment(w.values), 1e-9);
    }
    const auto w8 = sim(oracle::random_matrix(8, 8, rng));
    EXPECT_NEAR(km_match(w8).total_weight, oracle::brute_force_assignment(w8.values), 1e-9);
}

TEST(KmMatch, HandlesDegenerateTies) {
    // Constant and low-rank matrices have many optimal matchings.
    for (double v : {0.0, 1.0, -1.0}) {
        const auto w = sim(Matrix(5, 5, v));
        const auto pm = km_match(w);
        expect_bijection(pm, w);
        EXPECT_NEAR(pm.total_weight, 5 * v, 1e-12);
    }
    std::mt19937_64 rng(43);
    std::uniform_int_distribution<int> level(-2, 2);
    for (int i = 0; i < 100; ++i) {
        Matrix m(6, 6);
        for (double& v : m.flat()) v = 0.5 * level(rng);
        const auto w = sim(m);
        const auto pm = km_match(w);
        expect_bijection(pm, w);
        EXPECT_NEAR(pm.total_weight, oracle::brute_force_assignment(m), 1e-9);
    }
}

TEST(KmMatch, AdditiveShiftAndPermutationEquivariance) {
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> shift(-3.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = 2 + rng() % 7;
        const auto w = sim(oracle::random_matrix(n, n, rng));
        const auto base = km_match(w);

        const double c = shift(rng);
        Matrix shifted = w.values;
        for (double& v : shifted.flat()) v += c;
        const auto sp = km_match(sim(shifted));
        EXPECT_NEAR(sp.total_weight, base.total_weight + c * static_cast<double>(n), 1e-9);
        EXPECT_EQ(sp.assignment, base.assignment);

        // Row l of the permuted matrix is row perm[l] of the original.
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix rows(n, n);
        for (std::size_t l = 0; l < n; ++l) std::copy_n(w.values.row(perm[l]).begin(), n, rows.row(l).begin());
        const auto pp = km_match(sim(rows));
        EXPECT_NEAR(pp.total_weight, base.total_weight, 1e-9);
        for (std::size_t l = 0; l < n; ++l) EXPECT_EQ(pp.assignment[l], base.assignment[perm[l]]);

        double trace = 0.0;
        for (std::size_t l = 0; l < n; ++l) trace += w(l, l);
        EXPECT_GE(base.total_weight + 1e-12, trace);
        double any = 0.0;
        for (std::size_t l = 0; l < n; ++l) any += w(l, perm[l]);
        EXPECT_GE(base.total_weight + 1e-12, any);
    }
}

TEST(VideoSimilarityKm, SelfAndCyclicShift) {
    Matrix eye(5, 5);
    for (std::size_t i = 0; i < 5; ++i) eye(i, i) = 1.0;
    const FeatureSequence s{eye, Modality::Rgb};
    EXPECT_NEAR(video_similarity_km(s, s), 5.0, 1e-12);

    Matrix shifted(5, 5);
    for (std::size_t i = 0; i < 5; ++i) shifted((i + 2) % 5, i) = 1.0;  // query frame (i+2)%5 = support frame i
    const FeatureSequence q{shifted, Modality::Rgb};
    const auto pm = km_match(frame_similarity_matrix(s, q));
    EXPECT_NEAR(pm.total_weight, 5.0, 1e-12);
    for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(pm.assignment[l], (l + 2) % 5);
}

TEST(VideoSimilarityKm, UnequalLengthsRejected) {
    const FeatureSequence a{Matrix(3, 2, 1.0), Modality::Rgb}, b{Matrix(4, 2, 1.0), Modality::Rgb};
    EXPECT_THROW(video_similarity_km(a, b), std::invalid_argument);
}

TEST(VideoSimilarityKm, PermutedSubActionsSameClassWins) {
    SynthConfig cfg;
    cfg.num_classes = 2;
    cfg.videos_per_class = 2;
    cfg.frames = 8;
    cfg.dim = 16;
    cfg.num_subactions = 4;
    cfg.warp_min = cfg.warp_max = 1.0;
    cfg.permute_subactions = true;
    cfg.noise_sigma = 0.1;
    int wins = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        cfg.seed = 2000 + trial;
        const auto store = gen_synthetic(cfg);
        const auto& a = store.records[0];
        wins += video_similarity_km(a.rgb, store.records[1].rgb) > video_similarity_km(a.rgb, store.records[2].rgb);
    }
    EXPECT_GE(wins, 95);
}

TEST(KmLoss, ReferenceValues) {
    EXPECT_NEAR(km_loss(std::vector<double>(5, 1.3), 4), std::log(5.0), 1e-12);
    EXPECT_NEAR(km_loss(std::vector<double>{1e6, 0, 0, 0, 0}, 0), 0.0, 1e-12);
    EXPECT_NEAR(km_loss(std::vector<double>{0.9, 0.5, 0.2}, 0), oracle::direct_cross_entropy({0.9, 0.5, 0.2}, 0),
                1e-12);
    EXPECT_THROW(km_loss(std::vector<double>{0.1}, 1), std::out_of_range);
}

TEST(KmLossGrad, ReferenceValuesAndFiniteDifferences) {
    const auto g = km_loss_grad(std::vector<double>{0.3, 0.3}, 0);
    EXPECT_NEAR(g[0], -0.5, 1e-15);
    EXPECT_NEAR(g[1], 0.5, 1e-15);

    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> u(-1.0, 8.0);
    constexpr double eps = 1e-5;
    for (int i = 0; i < 20; ++i) {
        std::vector<double> s(5);
        for (auto& v : s) v = u(rng);
        const auto grad = km_loss_grad(s, i % 5);
        EXPECT_NEAR(std::accumulate(grad.begin(), grad.end(), 0.0), 0.0, 1e-14);
        double diff = 0, norm = 0;
        for (std::size_t k = 0; k < s.size(); ++k) {
            auto up = s, down = s;
            up[k] += eps;
            down[k] -= eps;
            const double fd = (km_loss(up, i % 5) - km_loss(down, i % 5)) / (2 * eps);
            diff += (fd - grad[k]) * (fd - grad[k]);
            norm += grad[k] * grad[k];
        }
        EXPECT_LT(std::sqrt(diff / norm), 1e-6);
    }
}

TEST(MatchingCsv, OneLinePerRow) {
    const auto w = sim(Matrix(2, 2, {0, 1, 0.5, 0}));
    std::ostringstream out;
    write_matching_csv(out, km_match(w), w);
    EXPECT_EQ(out.str(), "0,1,1\n1,0,0.5\n");
}

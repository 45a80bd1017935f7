#pragma once

// N-way K-shot episodes, four-branch scoring, fusion and evaluation.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tsjm/featurestore.hpp"
#include "tsjm/mcl.hpp"

namespace tsjm {

/// Records are referenced, not copied: an Episode must not outlive the store
/// it was sampled from.
struct Episode {
    struct Query {
        const VideoRecord* record = nullptr;
        std::size_t label = 0;  // index into `classes`
    };

    std::size_t way = 0;
    std::size_t shot = 0;
    std::vector<std::uint32_t> classes;                    // store class id per episode label
    std::vector<std::vector<const VideoRecord*>> support;  // [way][shot]
    std::vector<Query> queries;
};

Episode sample_episode(const FeatureStore& store, std::size_t way, std::size_t shot,
                       std::size_t queries_per_class, std::uint64_t seed);

enum class Branch : std::size_t { OtaRgb = 0, OtaFlow = 1, KmRgb = 2, KmFlow = 3 };
inline constexpr std::size_t kNumBranches = 4;

/// Per-class scores of one query, higher is better for every branch.
struct BranchScores {
    std::array<std::vector<double>, kNumBranches> by_branch;

    std::vector<double>& operator[](Branch b) noexcept { return by_branch[static_cast<std::size_t>(b)]; }
    const std::vector<double>& operator[](Branch b) const noexcept {
        return by_branch[static_cast<std::size_t>(b)];
    }
};

/// OTA scores are the negated mean DTW distance to a class's K supports, KM
/// scores the mean KM similarity; one pair per modality. `adapters` may be
/// null (features are used as stored).
BranchScores class_prototype_scores(const Episode& episode, const AdapterPair* adapters,
                                    const VideoRecord& query);

struct FusionWeights {
    std::array<double, kNumBranches> w{0.25, 0.25, 0.25, 0.25};

    void validate() const;
    static FusionWeights one_hot(Branch b);
};

/// z-normalizes each branch vector across classes (a constant vector maps to
/// zeros) and returns the weighted sum.
std::vector<double> fuse_scores(const BranchScores& scores, const FusionWeights& weights);

/// Argmax, lowest index on ties.
std::size_t classify(std::span<const double> fused);

struct EvalConfig {
    std::size_t way = 5;
    std::size_t shot = 1;
    std::size_t queries_per_class = 1;
    std::size_t episodes = 1000;
    FusionWeights weights;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

struct EpisodeResult {
    double fused = 0.0;
    std::array<double, kNumBranches> branch{};
};

struct EvalReport {
    double mean_accuracy = 0.0;
    double ci95_halfwidth = 0.0;
    std::size_t episodes = 0;
    std::array<double, kNumBranches> branch_accuracy{};
    std::vector<EpisodeResult> per_episode;
};

/// Seed of episode `index` in a run seeded with `seed`.
std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Runs cfg.episodes episodes (possibly on several threads) and aggregates
/// by episode index, so the report does not depend on cfg.threads.
EvalReport evaluate(const FeatureStore& store, const EvalConfig& cfg, const AdapterPair* adapters = nullptr);

}  // namespace tsjm

#include "tsjm/episodic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

#include "tsjm/bgm.hpp"
#include "tsjm/errors.hpp"
#include "tsjm/otm.hpp"

namespace tsjm {

Episode sample_episode(const FeatureStore& store, std::size_t way, std::size_t shot,
                       std::size_t queries_per_class, std::uint64_t seed) {
    if (way == 0 || shot == 0 || queries_per_class == 0) {
        throw std::invalid_argument("sample_episode: way, shot and queries_per_class must be >= 1");
    }
    const auto by_class = store.records_by_class();
    std::vector<std::uint32_t> eligible;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() >= shot + queries_per_class) eligible.push_back(static_cast<std::uint32_t>(c));
    }
    if (eligible.size() < way) {
        throw DomainError("cannot sample a " + std::to_string(way) + "-way " + std::to_string(shot) +
                          "-shot episode: only " + std::to_string(eligible.size()) + " classes have " +
                          std::to_string(shot + queries_per_class) + " records");
    }

    std::mt19937_64 rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);

    Episode ep;
    ep.way = way;
    ep.shot = shot;
    ep.classes.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(way));
    ep.support.resize(way);
    for (std::size_t label = 0; label < way; ++label) {
        auto idx = by_class[ep.classes[label]];
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t k = 0; k < shot; ++k) ep.support[label].push_back(&store.records[idx[k]]);
        for (std::size_t q = 0; q < queries_per_class; ++q) {
            ep.queries.push_back({&store.records[idx[shot + q]], label});
        }
    }
    return ep;
}

namespace {

// Supports (adapted once per episode when adapters are given).
class EpisodeScorer {
public:
    EpisodeScorer(const Episode& ep, const AdapterPair* adapters) : ep_(ep), adapters_(adapters) {
        support_.resize(ep.way);
        for (std::size_t c = 0; c < ep.way; ++c) {
            for (const VideoRecord* rec : ep.support[c]) support_[c].push_back(adapt(*rec));
        }
    }

    BranchScores score(const VideoRecord& query) const {
        const auto q = adapt(query);
        BranchScores out;
        for (auto& v : out.by_branch) v.assign(ep_.way, 0.0);
        for (std::size_t c = 0; c < ep_.way; ++c) {
            const double inv_k = 1.0 / static_cast<double>(support_[c].size());
            for (const auto& s : support_[c]) {
                out[Branch::OtaRgb][c] -= inv_k * video_distance_ota(s.first, q.first);
                out[Branch::OtaFlow][c] -= inv_k * video_distance_ota(s.second, q.second);
                out[Branch::KmRgb][c] += inv_k * video_similarity_km(s.first, q.first);
                out[Branch::KmFlow][c] += inv_k * video_similarity_km(s.second, q.second);
            }
        }
        return out;
    }

private:
    using Streams = std::pair<FeatureSequence, FeatureSequence>;

    Streams adapt(const VideoRecord& rec) const {
        if (!adapters_) return {rec.rgb, rec.flow};
        return {adapter_forward(rec.rgb, adapters_->rgb), adapter_forward(rec.flow, adapters_->flow)};
    }

    const Episode& ep_;
    const AdapterPair* adapters_;
    std::vector<std::vector<Streams>> support_;
};

}  // namespace

BranchScores class_prototype_scores(const Episode& episode, const AdapterPair* adapters,
                                    const VideoRecord& query) {
    return EpisodeScorer(episode, adapters).score(query);
}

void FusionWeights::validate() const {
    bool any = false;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("fusion weights must be finite and >= 0");
        any = any || v > 0.0;
    }
    if (!any) throw std::invalid_argument("fusion weights are all zero");
}

FusionWeights FusionWeights::one_hot(Branch b) {
    FusionWeights f;
    f.w.fill(0.0);
    f.w[static_cast<std::size_t>(b)] = 1.0;
    return f;
}

std::vector<double> fuse_scores(const BranchScores& scores, const FusionWeights& weights) {
    weights.validate();
    const std::size_t n = scores.by_branch[0].size();
    std::vector<double> fused(n, 0.0);
    for (std::size_t b = 0; b < kNumBranches; ++b) {
        const auto& v = scores.by_branch[b];
        if (v.size() != n) throw std::invalid_argument("fuse_scores: branch vectors differ in length");
        if (weights.w[b] == 0.0) continue;
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
        double var = 0.0;
        double scale = 1.0;
        for (double x : v) {
            var += (x - mean) * (x - mean);
            scale = std::max(scale, std::abs(x));
        }
        const double sd = std::sqrt(var / static_cast<double>(n));
        if (sd <= 1e-12 * scale) continue;  // constant branch contributes zeros
        for (std::size_t i = 0; i < n; ++i) fused[i] += weights.w[b] * (v[i] - mean) / sd;
    }
    return fused;
}

std::size_t classify(std::span<const double> fused) {
    if (fused.empty()) throw std::invalid_argument("classify: empty score vector");
    return static_cast<std::size_t>(std::max_element(fused.begin(), fused.end()) - fused.begin());
}

std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    // splitmix64 finalizer over (seed, index)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

EpisodeResult run_episode(const FeatureStore& store, const EvalConfig& cfg, const AdapterPair* adapters,
                          std::size_t index) {
    const Episode ep = sample_episode(store, cfg.way, cfg.shot, cfg.queries_per_class, episode_seed(cfg.seed, index));
    const EpisodeScorer scorer(ep, adapters);
    EpisodeResult r;
    for (const auto& q : ep.queries) {
        const BranchScores scores = scorer.score(*q.record);
        r.fused += classify(fuse_scores(scores, cfg.weights)) == q.label ? 1.0 : 0.0;
        for (std::size_t b = 0; b < kNumBranches; ++b) {
            const auto one = fuse_scores(scores, FusionWeights::one_hot(static_cast<Branch>(b)));
            r.branch[b] += classify(one) == q.label ? 1.0 : 0.0;
        }
    }
    const double inv = 1.0 / static_cast<double>(ep.queries.size());
    r.fused *= inv;
    for (auto& b : r.branch) b *= inv;
    return r;
}

}  // namespace

EvalReport evaluate(const FeatureStore& store, const EvalConfig& cfg, const AdapterPair* adapters) {
    if (cfg.episodes == 0) throw std::invalid_argument("evaluate: episodes must be >= 1");
    cfg.weights.validate();
    // Fail fast on infeasible N/K before spawning workers.
    (void)sample_episode(store, cfg.way, cfg.shot, cfg.queries_per_class, episode_seed(cfg.seed, 0));

    EvalReport report;
    report.episodes = cfg.episodes;
    report.per_episode.resize(cfg.episodes);

    const std::size_t workers = std::clamp<std::size_t>(cfg.threads, 1, cfg.episodes);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
        try {
            for (std::size_t i; (i = next.fetch_add(1)) < cfg.episodes;) {
                report.per_episode[i] = run_episode(store, cfg, adapters, i);
            }
        } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = cfg.episodes;
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);

    // Reduce in episode order.
    const double e = static_cast<double>(cfg.episodes);
    for (const auto& r : report.per_episode) {
        report.mean_accuracy += r.fused;
        for (std::size_t b = 0; b < kNumBranches; ++b) report.branch_accuracy[b] += r.branch[b];
    }
    report.mean_accuracy /= e;
    for (auto& b : report.branch_accuracy) b /= e;
    if (cfg.episodes > 1) {
        double ss = 0.0;
        for (const auto& r : report.per_episode) ss += (r.fused - report.mean_accuracy) * (r.fused - report.mean_accuracy);
        report.ci95_halfwidth = 1.96 * std::sqrt(ss / (e - 1.0)) / std::sqrt(e);
    }
    return report;
}

}  // namespace tsjm

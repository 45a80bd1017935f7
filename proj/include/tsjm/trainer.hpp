#pragma once

// Toy-scale adapter training with the combined contrastive + matching
// objective
//   L = l_cl * L_cl + l_ota * (L_ota^rgb + L_ota^flow) + l_km * (L_km^rgb + L_km^flow)

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "tsjm/bgm.hpp"
#include "tsjm/episodic.hpp"
#include "tsjm/mcl.hpp"
#include "tsjm/otm.hpp"

namespace tsjm {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 8;   // contrastive pairs per batch (k)
    std::size_t batches = 32;     // fixed batches per epoch, one full-batch step each epoch
    std::size_t way = 5;
    std::size_t shot = 1;
    double learning_rate = 1e-5;
    double tau = kDefaultTemperature;
    double lambda_cl = 1.0;
    double lambda_ota = 1.0;
    double lambda_km = 1.0;
    std::size_t bottleneck = 0;   // 0 selects dim / 4
    std::uint64_t seed = 0;

    void validate() const;
};

/// One episode for the matching losses plus k videos for the contrastive term.
struct TrainBatch {
    Episode episode;
    std::vector<const VideoRecord*> contrastive;
};

TrainBatch sample_train_batch(const FeatureStore& store, const TrainConfig& cfg, std::uint64_t seed);

struct LossBreakdown {
    double total = 0.0;
    double cl = 0.0;
    double ota = 0.0;  // L_ota^rgb + L_ota^flow
    double km = 0.0;   // L_km^rgb + L_km^flow
};

/// DTW paths and KM matchings chosen at a forward pass, in evaluation order.
struct FrozenStructure {
    std::vector<AlignmentPath> paths;
    std::vector<PerfectMatching> matchings;
};

LossBreakdown total_loss(const TrainBatch& batch, const AdapterPair& adapters, const TrainConfig& cfg);

/// Loss and its gradient with respect to both adapters. Alignment paths and
/// matchings are treated as constants; if `record` is non-null they are
/// stored there.
LossBreakdown total_loss_grad(const TrainBatch& batch, const AdapterPair& adapters, const TrainConfig& cfg,
                              AdapterPair& grad, FrozenStructure* record = nullptr);

/// Loss evaluated along previously recorded paths and matchings.
LossBreakdown total_loss_frozen(const TrainBatch& batch, const AdapterPair& adapters, const TrainConfig& cfg,
                                const FrozenStructure& frozen);

struct EpochLoss {
    std::size_t epoch = 0;
    LossBreakdown loss;
};

struct TrainResult {
    AdapterPair adapters;
    /// Row e is the mean loss over the fixed batches after e epochs (row 0 is
    /// the initial state), so there are epochs + 1 rows.
    std::vector<EpochLoss> trajectory;
};

/// Fresh adapters for a store: identity-initialized, seeded.
AdapterPair initial_adapters(std::size_t dim, std::size_t bottleneck, std::uint64_t seed);

/// Plain full-batch gradient descent. Throws DivergenceError on a non-finite loss.
TrainResult train(const FeatureStore& store, const TrainConfig& cfg);

/// Fraction of records whose rgb stream has its own flow stream as the most
/// cross-attention-similar flow among all records (lowest index on ties).
double retrieval_probe(std::span<const VideoRecord> pairs, const AdapterPair* adapters);

/// Probe over k records drawn (seeded) from distinct classes where possible.
double retrieval_probe(const FeatureStore& store, const AdapterPair* adapters, std::size_t k,
                       std::uint64_t seed);

/// `epoch,total,l_cl,l_ota,l_km` with a header row.
void write_trajectory_csv(std::ostream& out, std::span<const EpochLoss> trajectory);

}  // namespace tsjm

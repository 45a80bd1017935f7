#pragma once

// Bipartite graph matching: Kuhn-Munkres maximum-weight perfect matching.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "tsjm/simkernels.hpp"

namespace tsjm {

struct PerfectMatching {
    /// Support frame l is matched to query frame assignment[l].
    std::vector<std::size_t> assignment;
    double total_weight = 0.0;
};

/// Maximum-weight perfect matching on a square weight matrix.
///
/// Kuhn-Munkres in maximization form: keeps a feasible labeling
/// lx[i] + ly[j] >= W[i][j], grows an alternating tree from each free row
/// (ascending row order) over the equality subgraph, and tightens labels by
/// the minimum slack until an augmenting path appears. O(T^3).
PerfectMatching km_match(const CostMatrix& weights);

/// km_match(frame_similarity_matrix(s, q)).total_weight. Requires T_s == T_q.
double video_similarity_km(const FeatureSequence& s, const FeatureSequence& q);

/// -log softmax(similarities)[true_class], max-shift stabilized.
double km_loss(std::span<const double> similarities, std::size_t true_class);

/// softmax(similarities) - onehot(true_class).
std::vector<double> km_loss_grad(std::span<const double> similarities, std::size_t true_class);

/// Writes `l,assignment[l],weight_entry` lines.
void write_matching_csv(std::ostream& out, const PerfectMatching& matching, const CostMatrix& weights);

}  // namespace tsjm

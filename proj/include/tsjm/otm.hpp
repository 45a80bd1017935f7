#pragma once

// Ordered temporal matching: DTW video distance and its cross-entropy loss.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "tsjm/simkernels.hpp"

namespace tsjm {

struct AlignmentPath {
    std::vector<std::pair<std::size_t, std::size_t>> steps;
    double total_cost = 0.0;
};

/// Minimum-cost monotone alignment from (0,0) to (T_s-1, T_q-1) with steps
/// {(1,0), (0,1), (1,1)}. Ties prefer the diagonal predecessor, then (0,1),
/// then (1,0). `total_cost` is the sum of the entries along the path.
AlignmentPath dtw(const CostMatrix& distances);

/// dtw(frame_distance_matrix(s, q)).total_cost.
double video_distance_ota(const FeatureSequence& s, const FeatureSequence& q);

/// -log softmax(-distances)[true_class], max-shift stabilized.
double ota_loss(std::span<const double> distances, std::size_t true_class);

/// d ota_loss / d distances = p - onehot(true_class), p = softmax(-distances).
std::vector<double> ota_loss_grad(std::span<const double> distances, std::size_t true_class);

/// Writes the path as `l,m,cost_entry` lines.
void write_alignment_csv(std::ostream& out, const AlignmentPath& path, const CostMatrix& distances);

}  // namespace tsjm

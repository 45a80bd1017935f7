#pragma once

#include <span>
#include <vector>

#include "tsjm/featurestore.hpp"
#include "tsjm/matrix.hpp"

namespace tsjm {

enum class CostKind { Distance, Similarity };

/// T_s x T_q frame grid. Distance entries lie in [0, 2], similarity entries
/// in [-1, 1].
struct CostMatrix {
    Matrix values;
    CostKind kind = CostKind::Distance;

    std::size_t rows() const noexcept { return values.rows(); }
    std::size_t cols() const noexcept { return values.cols(); }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values(r, c); }
};

/// a.b / (|a| |b|), clamped to [-1, 1]. Throws std::invalid_argument
/// ("undefined cosine") for a zero-norm input or a length mismatch.
double cosine(std::span<const double> a, std::span<const double> b);

/// Gradients of cosine(a, b) (unclamped) with respect to a and b, scaled by
/// `upstream` and accumulated into grad_a / grad_b.
void cosine_backward(std::span<const double> a, std::span<const double> b, double upstream,
                     std::span<double> grad_a, std::span<double> grad_b);

/// values[l][m] = 1 - cosine(S[l], Q[m]).
CostMatrix frame_distance_matrix(const FeatureSequence& s, const FeatureSequence& q);

/// values[l][m] = cosine(S[l], Q[m]).
CostMatrix frame_similarity_matrix(const FeatureSequence& s, const FeatureSequence& q);

/// Parameter-free cross-attention similarity between two sequences.
///
/// Each sequence is pooled with softmax attention against the mean frame of
/// the other one (scaled dot product, 1/sqrt(D)); the result is the cosine
/// of the two pooled vectors.
double cross_attention_similarity(const FeatureSequence& x, const FeatureSequence& y);

/// Accumulates upstream * d(similarity)/dx and d/dy into grad_x / grad_y
/// (shapes T_x x D and T_y x D).
void cross_attention_backward(const FeatureSequence& x, const FeatureSequence& y, double upstream,
                              Matrix& grad_x, Matrix& grad_y);

}  // namespace tsjm

#pragma once

// Multi-modal contrastive learning: residual bottleneck adapter and the
// symmetric InfoNCE loss over cross-modal attention similarities.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tsjm/featurestore.hpp"
#include "tsjm/matrix.hpp"

namespace tsjm {

/// out_t = x_t + relu(x_t W_down + b_down) W_up + b_up
struct AdapterParams {
    Matrix w_down;                // D x B
    std::vector<double> b_down;   // B
    Matrix w_up;                  // B x D
    std::vector<double> b_up;     // D

    std::size_t dim() const noexcept { return w_down.rows(); }
    std::size_t bottleneck() const noexcept { return w_down.cols(); }

    /// Throws std::invalid_argument unless shapes agree, B < D and every
    /// entry is finite.
    void validate() const;

    /// Zero-valued parameters with the given shape.
    static AdapterParams zeros(std::size_t dim, std::size_t bottleneck);

    /// Seeded init: W_down ~ N(0, 1/D), everything else zero. W_up = 0 makes
    /// the adapter start as the identity.
    static AdapterParams init(std::size_t dim, std::size_t bottleneck, std::uint64_t seed);

    /// Visits every parameter block in a fixed order (w_down, b_down, w_up, b_up).
    template <class F>
    void for_each_block(F&& f) {
        f(w_down.flat());
        f(std::span<double>(b_down));
        f(w_up.flat());
        f(std::span<double>(b_up));
    }
    template <class F>
    void for_each_block(F&& f) const {
        f(w_down.flat());
        f(std::span<const double>(b_down));
        f(w_up.flat());
        f(std::span<const double>(b_up));
    }

    friend bool operator==(const AdapterParams&, const AdapterParams&) = default;
};

/// One adapter per modality.
struct AdapterPair {
    AdapterParams rgb;
    AdapterParams flow;

    const AdapterParams& for_modality(Modality m) const noexcept { return m == Modality::Rgb ? rgb : flow; }
    AdapterParams& for_modality(Modality m) noexcept { return m == Modality::Rgb ? rgb : flow; }

    friend bool operator==(const AdapterPair&, const AdapterPair&) = default;
};

FeatureSequence adapter_forward(const FeatureSequence& x, const AdapterParams& p);

struct AdapterGrads {
    Matrix input;          // T x D
    AdapterParams params;  // same shapes as the forward params
};

/// Exact gradients of adapter_forward given dL/d(output). relu'(0) = 0.
AdapterGrads adapter_backward(const FeatureSequence& x, const AdapterParams& p, const Matrix& upstream);

/// Adds the parameter gradient into `acc` (no input gradient). Used by the trainer.
void adapter_backward_accumulate(const FeatureSequence& x, const AdapterParams& p, const Matrix& upstream,
                                 AdapterParams& acc);

struct ContrastivePair {
    FeatureSequence rgb;
    FeatureSequence flow;
};

/// Entry (i, j) = cross_attention_similarity(rgb_i, flow_j).
Matrix mcl_similarity_matrix(std::span<const ContrastivePair> batch);

/// Symmetric InfoNCE with positives on the diagonal:
///   L = 1/(2k) sum_i [ -log softmax_row_i(S/tau)[i] - log softmax_col_i(S/tau)[i] ]
double infonce_loss(const Matrix& sim, double tau);

/// dL/dS for infonce_loss.
Matrix infonce_grad(const Matrix& sim, double tau);

inline constexpr double kDefaultTemperature = 0.1;

// ADPT checkpoint, little-endian: per adapter a section
//   "ADPT" | B u32 | D u32 | W_down D*B f32 | b_down B f32 | W_up B*D f32 | b_up D f32 | CRC32 u32
// where the CRC covers the section's preceding bytes. A pair file holds the
// rgb section followed by the flow section.
std::vector<std::uint8_t> encode_adapter(const AdapterParams& p);
void save_adapters(const AdapterPair& adapters, const std::filesystem::path& path);
AdapterPair load_adapters(const std::filesystem::path& path);

}  // namespace tsjm

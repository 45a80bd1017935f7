#include "tsjm/simkernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsjm {

namespace {

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void require_same_dim(const FeatureSequence& a, const FeatureSequence& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("feature dimension mismatch");
    if (a.length() == 0 || b.length() == 0) throw std::invalid_argument("empty feature sequence");
}

// Attention pooling of `x` against context `ctx`: returns pooled vector and
// the softmax weights.
struct Pooled {
    std::vector<double> vec;
    std::vector<double> weights;
};

std::vector<double> mean_frame(const Matrix& m) {
    std::vector<double> c(m.cols(), 0.0);
    for (std::size_t t = 0; t < m.rows(); ++t)
        for (std::size_t k = 0; k < m.cols(); ++k) c[k] += m(t, k);
    for (auto& v : c) v /= static_cast<double>(m.rows());
    return c;
}

Pooled attend(const Matrix& x, std::span<const double> ctx) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
    Pooled p{std::vector<double>(x.cols(), 0.0), std::vector<double>(x.rows())};
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < x.rows(); ++t) {
        p.weights[t] = dot(x.row(t), ctx) * scale;
        hi = std::max(hi, p.weights[t]);
    }
    double z = 0.0;
    for (auto& w : p.weights) z += (w = std::exp(w - hi));
    for (auto& w : p.weights) w /= z;
    for (std::size_t t = 0; t < x.rows(); ++t)
        for (std::size_t k = 0; k < x.cols(); ++k) p.vec[k] += p.weights[t] * x(t, k);
    return p;
}

// Backward through attend(): given g = dL/dpooled, accumulate into grad_x and
// grad_ctx.
void attend_backward(const Matrix& x, std::span<const double> ctx, const Pooled& p,
                     std::span<const double> g, Matrix& grad_x, std::span<double> grad_ctx) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
    std::vector<double> gw(x.rows());
    double mean_gw = 0.0;
    for (std::size_t t = 0; t < x.rows(); ++t) {
        gw[t] = dot(g, x.row(t));
        mean_gw += p.weights[t] * gw[t];
    }
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const double gs = p.weights[t] * (gw[t] - mean_gw) * scale;
        for (std::size_t k = 0; k < x.cols(); ++k) {
            grad_x(t, k) += p.weights[t] * g[k] + gs * ctx[k];
            grad_ctx[k] += gs * x(t, k);
        }
    }
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
    const double na2 = dot(a, a);
    const double nb2 = dot(b, b);
    if (!(na2 > 0.0) || !(nb2 > 0.0)) throw std::invalid_argument("undefined cosine");
    // sqrt(x * x) == x exactly, so cosine(a, a) is exactly 1.
    const double prod = na2 * nb2;
    const double denom = std::isfinite(prod) && prod > 0.0 ? std::sqrt(prod) : std::sqrt(na2) * std::sqrt(nb2);
    return std::clamp(dot(a, b) / denom, -1.0, 1.0);
}

void cosine_backward(std::span<const double> a, std::span<const double> b, double upstream,
                     std::span<double> grad_a, std::span<double> grad_b) {
    const double na2 = dot(a, a);
    const double nb2 = dot(b, b);
    const double na = std::sqrt(na2);
    const double nb = std::sqrt(nb2);
    if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("undefined cosine");
    const double inv = 1.0 / (na * nb);
    const double c = dot(a, b) * inv;
    for (std::size_t k = 0; k < a.size(); ++k) {
        grad_a[k] += upstream * (b[k] * inv - c * a[k] / na2);
        grad_b[k] += upstream * (a[k] * inv - c * b[k] / nb2);
    }
}

CostMatrix frame_similarity_matrix(const FeatureSequence& s, const FeatureSequence& q) {
    require_same_dim(s, q);
    CostMatrix out{Matrix(s.length(), q.length()), CostKind::Similarity};
    for (std::size_t l = 0; l < s.length(); ++l)
        for (std::size_t m = 0; m < q.length(); ++m) out.values(l, m) = cosine(s.frame(l), q.frame(m));
    return out;
}

CostMatrix frame_distance_matrix(const FeatureSequence& s, const FeatureSequence& q) {
    CostMatrix out = frame_similarity_matrix(s, q);
    for (double& v : out.values.flat()) v = 1.0 - v;
    out.kind = CostKind::Distance;
    return out;
}

double cross_attention_similarity(const FeatureSequence& x, const FeatureSequence& y) {
    require_same_dim(x, y);
    const auto cx = mean_frame(x.frames);
    const auto cy = mean_frame(y.frames);
    const Pooled px = attend(x.frames, cy);
    const Pooled py = attend(y.frames, cx);
    return cosine(px.vec, py.vec);
}

void cross_attention_backward(const FeatureSequence& x, const FeatureSequence& y, double upstream,
                              Matrix& grad_x, Matrix& grad_y) {
    require_same_dim(x, y);
    const std::size_t d = x.dim();
    const auto cx = mean_frame(x.frames);
    const auto cy = mean_frame(y.frames);
    const Pooled px = attend(x.frames, cy);
    const Pooled py = attend(y.frames, cx);

    std::vector<double> g_px(d, 0.0), g_py(d, 0.0);
    cosine_backward(px.vec, py.vec, upstream, g_px, g_py);

    std::vector<double> g_cx(d, 0.0), g_cy(d, 0.0);
    attend_backward(x.frames, cy, px, g_px, grad_x, g_cy);
    attend_backward(y.frames, cx, py, g_py, grad_y, g_cx);

    // Mean-frame contexts.
    for (std::size_t t = 0; t < x.length(); ++t)
        for (std::size_t k = 0; k < d; ++k) grad_x(t, k) += g_cx[k] / static_cast<double>(x.length());
    for (std::size_t t = 0; t < y.length(); ++t)
        for (std::size_t k = 0; k < d; ++k) grad_y(t, k) += g_cy[k] / static_cast<double>(y.length());
}

}  // namespace tsjm

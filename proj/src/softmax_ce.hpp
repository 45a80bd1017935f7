#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsjm::detail {

inline void check_logits(std::span<const double> logits, std::size_t target) {
    if (logits.empty()) throw std::invalid_argument("empty score vector");
    if (target >= logits.size()) {
        throw std::out_of_range("true_class " + std::to_string(target) + " out of range for " +
                                std::to_string(logits.size()) + " classes");
    }
    for (double v : logits) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite score");
    }
}

inline std::vector<double> softmax(std::span<const double> logits) {
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - hi));
    for (auto& v : p) v /= z;
    return p;
}

/// -log softmax(logits)[target] via log-sum-exp with max shift.
inline double cross_entropy(std::span<const double> logits, std::size_t target) {
    check_logits(logits, target);
    const double hi = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - hi);
    return std::max(0.0, hi + std::log(z) - logits[target]);
}

/// d cross_entropy / d logits = softmax(logits) - onehot(target).
inline std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t target) {
    check_logits(logits, target);
    auto g = softmax(logits);
    g[target] -= 1.0;
    return g;
}

}  // namespace tsjm::detail

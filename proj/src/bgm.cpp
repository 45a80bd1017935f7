#include "tsjm/bgm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "softmax_ce.hpp"

namespace tsjm {

PerfectMatching km_match(const CostMatrix& weights) {
    const std::size_t n = weights.rows();
    if (n != weights.cols()) throw std::invalid_argument("km_match: weight matrix must be square");
    if (n == 0) throw std::invalid_argument("km_match: empty matrix");
    for (double v : weights.values.flat()) {
        if (!std::isfinite(v)) throw std::invalid_argument("km_match: non-finite weight");
    }

    constexpr double kInf = std::numeric_limits<double>::infinity();
    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    // Column index n is a virtual root column used to hang the free row.
    std::vector<double> lx(n, 0.0), ly(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        lx[i] = *std::max_element(weights.values.row(i).begin(), weights.values.row(i).end());
    }
    std::vector<std::size_t> row_of(n + 1, kNone);  // column -> matched row
    std::vector<std::size_t> via(n + 1, kNone);     // column -> previous column in tree
    std::vector<double> slack(n + 1);
    std::vector<bool> in_tree(n + 1);

    for (std::size_t root = 0; root < n; ++root) {
        row_of[n] = root;
        std::size_t col = n;
        std::fill(slack.begin(), slack.end(), kInf);
        std::fill(in_tree.begin(), in_tree.end(), false);

        // Grow the alternating tree until it reaches a free column.
        while (row_of[col] != kNone) {
            in_tree[col] = true;
            const std::size_t row = row_of[col];
            double delta = kInf;
            std::size_t next = kNone;
            for (std::size_t j = 0; j < n; ++j) {
                if (in_tree[j]) continue;
                const double s = lx[row] + ly[j] - weights(row, j);
                if (s < slack[j]) {
                    slack[j] = s;
                    via[j] = col;
                }
                if (slack[j] < delta) {
                    delta = slack[j];
                    next = j;
                }
            }
            // Tighten labels: tree rows drop, tree columns rise, the rest lose slack.
            for (std::size_t j = 0; j <= n; ++j) {
                if (in_tree[j]) {
                    lx[row_of[j]] -= delta;
                    ly[j] += delta;
                } else {
                    slack[j] -= delta;
                }
            }
            col = next;
        }

        // Flip the augmenting path back to the root.
        while (col != n) {
            const std::size_t prev = via[col];
            row_of[col] = row_of[prev];
            col = prev;
        }
    }

    PerfectMatching result;
    result.assignment.assign(n, 0);
    for (std::size_t j = 0; j < n; ++j) result.assignment[row_of[j]] = j;
    for (std::size_t i = 0; i < n; ++i) result.total_weight += weights(i, result.assignment[i]);
    return result;
}

double video_similarity_km(const FeatureSequence& s, const FeatureSequence& q) {
    if (s.length() != q.length()) {
        throw std::invalid_argument("video_similarity_km: sequences must have equal length");
    }
    return km_match(frame_similarity_matrix(s, q)).total_weight;
}

double km_loss(std::span<const double> similarities, std::size_t true_class) {
    return detail::cross_entropy(similarities, true_class);
}

std::vector<double> km_loss_grad(std::span<const double> similarities, std::size_t true_class) {
    return detail::cross_entropy_grad(similarities, true_class);
}

void write_matching_csv(std::ostream& out, const PerfectMatching& matching, const CostMatrix& weights) {
    out.precision(17);
    for (std::size_t l = 0; l < matching.assignment.size(); ++l) {
        out << l << ',' << matching.assignment[l] << ',' << weights(l, matching.assignment[l]) << '\n';
    }
}

}  // namespace tsjm

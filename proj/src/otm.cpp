#include "tsjm/otm.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "softmax_ce.hpp"

namespace tsjm {

namespace {

enum class Step : unsigned char { Start, Diag, Left, Up };

}  // namespace

AlignmentPath dtw(const CostMatrix& distances) {
    const std::size_t rows = distances.rows();
    const std::size_t cols = distances.cols();
    if (rows == 0 || cols == 0) throw std::invalid_argument("dtw: empty matrix");
    for (double v : distances.values.flat()) {
        if (!std::isfinite(v)) throw std::invalid_argument("dtw: non-finite cost");
    }

    constexpr double kInf = std::numeric_limits<double>::infinity();
    Matrix acc(rows, cols, kInf);
    std::vector<Step> back(rows * cols, Step::Start);

    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            if (i == 0 && j == 0) {
                acc(0, 0) = distances(0, 0);
                continue;
            }
            // Candidate order fixes the tie-break: diagonal, then (i, j-1), then (i-1, j).
            double best = kInf;
            Step how = Step::Start;
            if (i > 0 && j > 0 && acc(i - 1, j - 1) < best) best = acc(i - 1, j - 1), how = Step::Diag;
            if (j > 0 && acc(i, j - 1) < best) best = acc(i, j - 1), how = Step::Left;
            if (i > 0 && acc(i - 1, j) < best) best = acc(i - 1, j), how = Step::Up;
            acc(i, j) = best + distances(i, j);
            back[i * cols + j] = how;
        }
    }

    AlignmentPath path;
    std::size_t i = rows - 1, j = cols - 1;
    for (;;) {
        path.steps.emplace_back(i, j);
        const Step how = back[i * cols + j];
        if (how == Step::Start) break;
        if (how != Step::Left) --i;
        if (how != Step::Up) --j;
    }
    std::reverse(path.steps.begin(), path.steps.end());
    // Re-sum along the path so total_cost is exactly the path's entry sum.
    for (auto [l, m] : path.steps) path.total_cost += distances(l, m);
    return path;
}

double video_distance_ota(const FeatureSequence& s, const FeatureSequence& q) {
    return dtw(frame_distance_matrix(s, q)).total_cost;
}

double ota_loss(std::span<const double> distances, std::size_t true_class) {
    std::vector<double> logits(distances.begin(), distances.end());
    for (auto& v : logits) v = -v;
    return detail::cross_entropy(logits, true_class);
}

std::vector<double> ota_loss_grad(std::span<const double> distances, std::size_t true_class) {
    std::vector<double> logits(distances.begin(), distances.end());
    for (auto& v : logits) v = -v;
    auto g = detail::cross_entropy_grad(logits, true_class);
    for (auto& v : g) v = -v;  // logits = -distances
    return g;
}

void write_alignment_csv(std::ostream& out, const AlignmentPath& path, const CostMatrix& distances) {
    out.precision(17);
    for (auto [l, m] : path.steps) out << l << ',' << m << ',' << distances(l, m) << '\n';
}

}  // namespace tsjm

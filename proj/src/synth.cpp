#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "tsjm/featurestore.hpp"

namespace tsjm {

void SynthConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("SynthConfig: " + what); };
    if (num_classes == 0) fail("num_classes must be >= 1");
    if (videos_per_class == 0) fail("videos_per_class must be >= 1");
    if (frames == 0) fail("frames must be >= 1");
    if (dim == 0) fail("dim must be >= 1");
    if (num_subactions == 0 || num_subactions > frames) fail("num_subactions must be in [1, frames]");
    if (!(warp_min > 0.0) || !(warp_max >= warp_min) || !std::isfinite(warp_max)) {
        fail("speed warp range must satisfy 0 < min <= max < inf");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be finite and >= 0");
}

namespace {

using Vec = std::vector<double>;

Vec unit_gaussian(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec v(dim);
    double n2 = 0.0;
    do {
        for (auto& x : v) x = normal(rng);
        n2 = std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
    } while (n2 < 1e-12);
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
    return v;
}

// Random rotation via Gram-Schmidt on Gaussian rows.
Matrix random_rotation(std::size_t dim, std::mt19937_64& rng) {
    Matrix q(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        Vec v;
        double n2 = 0.0;
        do {
            v = unit_gaussian(dim, rng);
            for (std::size_t j = 0; j < i; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < dim; ++k) dot += v[k] * q(j, k);
                for (std::size_t k = 0; k < dim; ++k) v[k] -= dot * q(j, k);
            }
            n2 = std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
        } while (n2 < 1e-8);
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t k = 0; k < dim; ++k) q(i, k) = v[k] * inv;
    }
    return q;
}

// Writes base + noise into `out` as f32-representable doubles, redrawing the
// noise while the frame norm is below 1e-8.
void emit_frame(std::span<const double> base, double sigma, std::mt19937_64& rng, std::span<double> out) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int attempt = 0; attempt < 64; ++attempt) {
        double n2 = 0.0;
        for (std::size_t k = 0; k < base.size(); ++k) {
            out[k] = static_cast<double>(static_cast<float>(base[k] + sigma * normal(rng)));
            n2 += out[k] * out[k];
        }
        if (std::sqrt(n2) >= 1e-8) return;
    }
    throw std::logic_error("gen_synthetic: could not draw a non-zero frame");
}

}  // namespace

FeatureStore gen_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.dim;
    const std::size_t subs = cfg.num_subactions;

    const Matrix motion = random_rotation(d, rng);
    std::vector<std::vector<Vec>> anchors(cfg.num_classes);
    for (auto& cls : anchors) {
        for (std::size_t s = 0; s < subs; ++s) cls.push_back(unit_gaussian(d, rng));
    }

    std::uniform_real_distribution<double> warp(cfg.warp_min, cfg.warp_max);
    std::vector<VideoRecord> records;
    records.reserve(cfg.num_classes * cfg.videos_per_class);
    std::uint32_t next_id = 0;
    Vec diff(d), flow_base(d);

    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        for (std::size_t v = 0; v < cfg.videos_per_class; ++v) {
            std::vector<std::size_t> order(subs);
            std::iota(order.begin(), order.end(), 0);
            if (cfg.permute_subactions) std::shuffle(order.begin(), order.end(), rng);

            // Cumulative segment ends on a continuous timeline.
            std::vector<double> ends(subs);
            double total = 0.0;
            for (std::size_t s = 0; s < subs; ++s) {
                total += cfg.warp_min == cfg.warp_max ? cfg.warp_min : warp(rng);
                ends[s] = total;
            }

            Matrix rgb(cfg.frames, d), flow(cfg.frames, d);
            for (std::size_t t = 0; t < cfg.frames; ++t) {
                const double pos = (static_cast<double>(t) + 0.5) / static_cast<double>(cfg.frames) * total;
                std::size_t seg = 0;
                while (seg + 1 < subs && ends[seg] <= pos) ++seg;
                const Vec& cur = anchors[c][order[seg]];
                for (std::size_t k = 0; k < d; ++k) {
                    diff[k] = cur[k] - (seg > 0 ? anchors[c][order[seg - 1]][k] : 0.0);
                }
                for (std::size_t i = 0; i < d; ++i) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < d; ++k) acc += motion(i, k) * diff[k];
                    flow_base[i] = acc;
                }
                emit_frame(cur, cfg.noise_sigma, rng, rgb.row(t));
                emit_frame(flow_base, cfg.noise_sigma, rng, flow.row(t));
            }
            records.push_back({next_id++, static_cast<std::uint32_t>(c),
                               {std::move(rgb), Modality::Rgb}, {std::move(flow), Modality::Flow}});
        }
    }
    return make_store(std::move(records));
}

}  // namespace tsjm

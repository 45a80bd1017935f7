#include "tsjm/mcl.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "softmax_ce.hpp"
#include "tsjm/binary_io.hpp"
#include "tsjm/simkernels.hpp"

namespace tsjm {

void AdapterParams::validate() const {
    const std::size_t d = dim(), b = bottleneck();
    if (d == 0 || b == 0) throw std::invalid_argument("adapter: empty shape");
    if (b >= d) throw std::invalid_argument("adapter: bottleneck must be smaller than dim");
    if (b_down.size() != b || w_up.rows() != b || w_up.cols() != d || b_up.size() != d) {
        throw std::invalid_argument("adapter: inconsistent parameter shapes");
    }
    for_each_block([](std::span<const double> block) {
        for (double v : block) {
            if (!std::isfinite(v)) throw std::invalid_argument("adapter: non-finite parameter");
        }
    });
}

AdapterParams AdapterParams::zeros(std::size_t dim, std::size_t bottleneck) {
    return {Matrix(dim, bottleneck), std::vector<double>(bottleneck, 0.0), Matrix(bottleneck, dim),
            std::vector<double>(dim, 0.0)};
}

AdapterParams AdapterParams::init(std::size_t dim, std::size_t bottleneck, std::uint64_t seed) {
    AdapterParams p = zeros(dim, bottleneck);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    for (double& v : p.w_down.flat()) v = normal(rng);
    p.validate();
    return p;
}

namespace {

void require_adapter_input(const FeatureSequence& x, const AdapterParams& p) {
    if (x.dim() != p.dim()) {
        throw std::invalid_argument("adapter: input dim " + std::to_string(x.dim()) + " != adapter dim " +
                                    std::to_string(p.dim()));
    }
}

// Pre-activations z = x W_down + b_down for one frame.
void bottleneck_preact(std::span<const double> x, const AdapterParams& p, std::span<double> z) {
    for (std::size_t b = 0; b < p.bottleneck(); ++b) z[b] = p.b_down[b];
    for (std::size_t k = 0; k < x.size(); ++k) {
        const auto w = p.w_down.row(k);
        for (std::size_t b = 0; b < z.size(); ++b) z[b] += x[k] * w[b];
    }
}

}  // namespace

FeatureSequence adapter_forward(const FeatureSequence& x, const AdapterParams& p) {
    require_adapter_input(x, p);
    const std::size_t d = p.dim(), nb = p.bottleneck();
    FeatureSequence out{x.frames, x.modality};
    std::vector<double> z(nb);
    for (std::size_t t = 0; t < x.length(); ++t) {
        bottleneck_preact(x.frame(t), p, z);
        auto o = out.frames.row(t);
        for (std::size_t k = 0; k < d; ++k) o[k] += p.b_up[k];
        for (std::size_t b = 0; b < nb; ++b) {
            const double h = z[b] > 0.0 ? z[b] : 0.0;
            if (h == 0.0) continue;
            const auto w = p.w_up.row(b);
            for (std::size_t k = 0; k < d; ++k) o[k] += h * w[k];
        }
    }
    return out;
}

namespace {

void backward_impl(const FeatureSequence& x, const AdapterParams& p, const Matrix& upstream,
                   AdapterParams& gp, Matrix* gx) {
    require_adapter_input(x, p);
    if (upstream.rows() != x.length() || upstream.cols() != x.dim()) {
        throw std::invalid_argument("adapter_backward: upstream gradient shape mismatch");
    }
    const std::size_t d = p.dim(), nb = p.bottleneck();
    std::vector<double> z(nb), gz(nb);
    for (std::size_t t = 0; t < x.length(); ++t) {
        const auto xt = x.frame(t);
        const auto g = upstream.row(t);
        bottleneck_preact(xt, p, z);
        for (std::size_t k = 0; k < d; ++k) gp.b_up[k] += g[k];
        for (std::size_t b = 0; b < nb; ++b) {
            const auto w = p.w_up.row(b);
            auto gw = gp.w_up.row(b);
            double gh = 0.0;
            const double h = z[b] > 0.0 ? z[b] : 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                gw[k] += h * g[k];
                gh += w[k] * g[k];
            }
            gz[b] = z[b] > 0.0 ? gh : 0.0;
            gp.b_down[b] += gz[b];
        }
        for (std::size_t k = 0; k < d; ++k) {
            auto gw = gp.w_down.row(k);
            const auto w = p.w_down.row(k);
            double acc = g[k];
            for (std::size_t b = 0; b < nb; ++b) {
                gw[b] += xt[k] * gz[b];
                acc += w[b] * gz[b];
            }
            if (gx) (*gx)(t, k) = acc;
        }
    }
}

}  // namespace

AdapterGrads adapter_backward(const FeatureSequence& x, const AdapterParams& p, const Matrix& upstream) {
    AdapterGrads g{Matrix(x.length(), x.dim()), AdapterParams::zeros(p.dim(), p.bottleneck())};
    backward_impl(x, p, upstream, g.params, &g.input);
    return g;
}

void adapter_backward_accumulate(const FeatureSequence& x, const AdapterParams& p, const Matrix& upstream,
                                 AdapterParams& acc) {
    backward_impl(x, p, upstream, acc, nullptr);
}

Matrix mcl_similarity_matrix(std::span<const ContrastivePair> batch) {
    if (batch.empty()) throw std::invalid_argument("contrastive batch is empty");
    const std::size_t k = batch.size();
    Matrix sim(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) sim(i, j) = cross_attention_similarity(batch[i].rgb, batch[j].flow);
    return sim;
}

namespace {

void check_infonce(const Matrix& sim, double tau) {
    if (sim.rows() != sim.cols()) throw std::invalid_argument("infonce: similarity matrix must be square");
    if (sim.rows() == 0) throw std::invalid_argument("infonce: empty similarity matrix");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("infonce: temperature must be > 0");
}

}  // namespace

double infonce_loss(const Matrix& sim, double tau) {
    check_infonce(sim, tau);
    const std::size_t k = sim.rows();
    std::vector<double> logits(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) logits[j] = sim(i, j) / tau;
        total += detail::cross_entropy(logits, i);
        for (std::size_t j = 0; j < k; ++j) logits[j] = sim(j, i) / tau;
        total += detail::cross_entropy(logits, i);
    }
    return total / (2.0 * static_cast<double>(k));
}

Matrix infonce_grad(const Matrix& sim, double tau) {
    check_infonce(sim, tau);
    const std::size_t k = sim.rows();
    const double scale = 1.0 / (2.0 * static_cast<double>(k) * tau);
    Matrix g(k, k);
    std::vector<double> logits(k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) logits[j] = sim(i, j) / tau;
        const auto row = detail::cross_entropy_grad(logits, i);
        for (std::size_t j = 0; j < k; ++j) g(i, j) += scale * row[j];
        for (std::size_t j = 0; j < k; ++j) logits[j] = sim(j, i) / tau;
        const auto col = detail::cross_entropy_grad(logits, i);
        for (std::size_t j = 0; j < k; ++j) g(j, i) += scale * col[j];
    }
    return g;
}

namespace {

constexpr std::array<std::uint8_t, 4> kAdapterMagic{'A', 'D', 'P', 'T'};

AdapterParams read_adapter(std::span<const std::uint8_t> bytes, std::size_t& offset) {
    ByteReader r(bytes.subspan(offset));
    r.expect_magic(kAdapterMagic);
    const std::uint32_t b = r.u32();
    const std::uint32_t d = r.u32();
    if (b == 0 || d == 0 || b >= d) {
        throw FormatError(FormatErrc::InvariantViolation, "adapter shape B=" + std::to_string(b) +
                                                              " D=" + std::to_string(d));
    }
    r.require((2ull * b * d + b + d) * 4);
    AdapterParams p = AdapterParams::zeros(d, b);
    p.for_each_block([&](std::span<double> block) {
        for (double& v : block) v = static_cast<double>(r.f32());
    });
    const std::size_t body = r.position();
    const std::uint32_t crc = r.u32();
    if (crc32_of(bytes.subspan(offset, body)) != crc) throw FormatError(FormatErrc::ChecksumMismatch, "");
    offset += r.position();
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatErrc::NonFinite, e.what());
    }
    return p;
}

}  // namespace

std::vector<std::uint8_t> encode_adapter(const AdapterParams& p) {
    p.validate();
    ByteWriter w;
    w.bytes(kAdapterMagic);
    w.u32(static_cast<std::uint32_t>(p.bottleneck()));
    w.u32(static_cast<std::uint32_t>(p.dim()));
    p.for_each_block([&](std::span<const double> block) {
        for (double v : block) w.f32(static_cast<float>(v));
    });
    w.u32(crc32_of(w.data()));
    return w.take();
}

void save_adapters(const AdapterPair& adapters, const std::filesystem::path& path) {
    auto bytes = encode_adapter(adapters.rgb);
    const auto flow = encode_adapter(adapters.flow);
    bytes.insert(bytes.end(), flow.begin(), flow.end());
    write_file(path, bytes);
}

AdapterPair load_adapters(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::size_t offset = 0;
    AdapterPair pair;
    pair.rgb = read_adapter(bytes, offset);
    pair.flow = read_adapter(bytes, offset);
    if (offset != bytes.size()) throw FormatError(FormatErrc::TrailingData, "");
    return pair;
}

}  // namespace tsjm

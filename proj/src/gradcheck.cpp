#include "tsjm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tsjm/bgm.hpp"
#include "tsjm/episodic.hpp"
#include "tsjm/mcl.hpp"
#include "tsjm/otm.hpp"
#include "tsjm/simkernels.hpp"
#include "tsjm/trainer.hpp"

namespace tsjm {

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps) {
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

namespace {

std::vector<double> flatten(const AdapterPair& p) {
    std::vector<double> out;
    for (const auto* a : {&p.rgb, &p.flow}) {
        a->for_each_block([&](std::span<const double> b) { out.insert(out.end(), b.begin(), b.end()); });
    }
    return out;
}

void unflatten(std::span<const double> flat, AdapterPair& p) {
    std::size_t i = 0;
    for (auto* a : {&p.rgb, &p.flow}) {
        a->for_each_block([&](std::span<double> b) {
            for (double& v : b) v = flat[i++];
        });
    }
}

std::vector<double> flatten(const AdapterParams& p) {
    std::vector<double> out;
    p.for_each_block([&](std::span<const double> b) { out.insert(out.end(), b.begin(), b.end()); });
    return out;
}

void unflatten(std::span<const double> flat, AdapterParams& p) {
    std::size_t i = 0;
    p.for_each_block([&](std::span<double> b) {
        for (double& v : b) v = flat[i++];
    });
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> normal(0.0, sd);
    Matrix m(r, c);
    for (double& v : m.flat()) v = normal(rng);
    return m;
}

AdapterParams random_adapter(std::size_t dim, std::size_t bottleneck, std::mt19937_64& rng) {
    AdapterParams p = AdapterParams::zeros(dim, bottleneck);
    std::normal_distribution<double> normal(0.0, 0.5);
    p.for_each_block([&](std::span<double> b) {
        for (double& v : b) v = normal(rng);
    });
    return p;
}

template <class Check>
SuiteResult run_suite(const std::string& name, const GradcheckConfig& cfg, Check&& check) {
    SuiteResult r{name, 0.0, cfg.instances};
    for (std::size_t i = 0; i < cfg.instances; ++i) {
        std::mt19937_64 rng(episode_seed(cfg.seed, i));
        r.max_rel_error = std::max(r.max_rel_error, check(rng));
    }
    return r;
}

}  // namespace

SuiteResult check_ota_loss_grad(const GradcheckConfig& cfg) {
    return run_suite("otm/ota_loss_grad", cfg, [&](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> dist(0.0, 4.0);
        std::vector<double> d(5);
        for (auto& v : d) v = dist(rng);
        const std::size_t target = rng() % d.size();
        const auto numeric = numeric_gradient([&](std::span<const double> x) { return ota_loss(x, target); }, d, cfg.eps);
        return relative_error(ota_loss_grad(d, target), numeric);
    });
}

SuiteResult check_km_loss_grad(const GradcheckConfig& cfg) {
    return run_suite("bgm/km_loss_grad", cfg, [&](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> dist(-2.0, 8.0);
        std::vector<double> s(5);
        for (auto& v : s) v = dist(rng);
        const std::size_t target = rng() % s.size();
        const auto numeric = numeric_gradient([&](std::span<const double> x) { return km_loss(x, target); }, s, cfg.eps);
        return relative_error(km_loss_grad(s, target), numeric);
    });
}

SuiteResult check_infonce_grad(const GradcheckConfig& cfg) {
    return run_suite("mcl/infonce_grad", cfg, [&](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        Matrix sim(4, 4);
        for (double& v : sim.flat()) v = dist(rng);
        const double tau = 0.5;
        const auto numeric = numeric_gradient(
            [&](std::span<const double> x) {
                return infonce_loss(Matrix(4, 4, std::vector<double>(x.begin(), x.end())), tau);
            },
            sim.flat(), cfg.eps);
        const Matrix g = infonce_grad(sim, tau);
        return relative_error(g.flat(), numeric);
    });
}

SuiteResult check_adapter_backward(const GradcheckConfig& cfg) {
    return run_suite("mcl/adapter_backward", cfg, [&](std::mt19937_64& rng) {
        constexpr std::size_t t = 3, d = 6, b = 2;
        const FeatureSequence x{random_matrix(t, d, rng), Modality::Rgb};
        const AdapterParams p = random_adapter(d, b, rng);
        const Matrix upstream = random_matrix(t, d, rng);
        auto objective = [&](const FeatureSequence& in, const AdapterParams& params) {
            const auto out = adapter_forward(in, params);
            double acc = 0.0;
            for (std::size_t i = 0; i < upstream.size(); ++i) acc += upstream.flat()[i] * out.frames.flat()[i];
            return acc;
        };
        const AdapterGrads g = adapter_backward(x, p, upstream);

        std::vector<double> analytic(g.input.flat().begin(), g.input.flat().end());
        const auto gp = flatten(g.params);
        analytic.insert(analytic.end(), gp.begin(), gp.end());

        auto numeric = numeric_gradient(
            [&](std::span<const double> v) {
                return objective({Matrix(t, d, std::vector<double>(v.begin(), v.end())), Modality::Rgb}, p);
            },
            x.frames.flat(), cfg.eps);
        const auto np = numeric_gradient(
            [&](std::span<const double> v) {
                AdapterParams q = p;
                unflatten(v, q);
                return objective(x, q);
            },
            flatten(p), cfg.eps);
        numeric.insert(numeric.end(), np.begin(), np.end());
        return relative_error(analytic, numeric);
    });
}

SuiteResult check_mcl_chain(const GradcheckConfig& cfg) {
    return run_suite("mcl/chain", cfg, [&](std::mt19937_64& rng) {
        constexpr std::size_t k = 3, t = 3, d = 6, b = 2;
        const double tau = 0.5;
        std::vector<FeatureSequence> rgb, flow;
        for (std::size_t i = 0; i < k; ++i) {
            rgb.push_back({random_matrix(t, d, rng), Modality::Rgb});
            flow.push_back({random_matrix(t, d, rng), Modality::Flow});
        }
        const AdapterPair adapters{random_adapter(d, b, rng), random_adapter(d, b, rng)};

        auto loss = [&](const AdapterPair& a) {
            std::vector<ContrastivePair> batch;
            for (std::size_t i = 0; i < k; ++i) {
                batch.push_back({adapter_forward(rgb[i], a.rgb), adapter_forward(flow[i], a.flow)});
            }
            return infonce_loss(mcl_similarity_matrix(batch), tau);
        };

        std::vector<ContrastivePair> batch;
        for (std::size_t i = 0; i < k; ++i) {
            batch.push_back({adapter_forward(rgb[i], adapters.rgb), adapter_forward(flow[i], adapters.flow)});
        }
        const Matrix g_sim = infonce_grad(mcl_similarity_matrix(batch), tau);
        std::vector<Matrix> g_rgb(k, Matrix(t, d)), g_flow(k, Matrix(t, d));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                cross_attention_backward(batch[i].rgb, batch[j].flow, g_sim(i, j), g_rgb[i], g_flow[j]);
        AdapterPair grad{AdapterParams::zeros(d, b), AdapterParams::zeros(d, b)};
        for (std::size_t i = 0; i < k; ++i) {
            adapter_backward_accumulate(rgb[i], adapters.rgb, g_rgb[i], grad.rgb);
            adapter_backward_accumulate(flow[i], adapters.flow, g_flow[i], grad.flow);
        }

        const auto numeric = numeric_gradient(
            [&](std::span<const double> v) {
                AdapterPair a = adapters;
                unflatten(v, a);
                return loss(a);
            },
            flatten(adapters), cfg.eps);
        return relative_error(flatten(grad), numeric);
    });
}

SuiteResult check_trainer_grad(const GradcheckConfig& cfg) {
    return run_suite("trainer/total_loss_grad", cfg, [&](std::mt19937_64& rng) {
        SynthConfig sc;
        sc.num_classes = 4;
        sc.videos_per_class = 3;
        sc.frames = 4;
        sc.dim = 8;
        sc.num_subactions = 2;
        sc.warp_min = 0.7;
        sc.warp_max = 1.5;
        sc.permute_subactions = true;
        sc.noise_sigma = 0.3;
        sc.seed = rng();
        const FeatureStore store = gen_synthetic(sc);

        TrainConfig tc;
        tc.batch_size = 3;
        tc.way = 3;
        tc.tau = 0.5;
        tc.bottleneck = 2;
        const TrainBatch batch = sample_train_batch(store, tc, rng());
        const AdapterPair adapters{random_adapter(sc.dim, 2, rng), random_adapter(sc.dim, 2, rng)};

        AdapterPair grad{AdapterParams::zeros(sc.dim, 2), AdapterParams::zeros(sc.dim, 2)};
        FrozenStructure frozen;
        total_loss_grad(batch, adapters, tc, grad, &frozen);
        const auto numeric = numeric_gradient(
            [&](std::span<const double> v) {
                AdapterPair a = adapters;
                unflatten(v, a);
                return total_loss_frozen(batch, a, tc, frozen).total;
            },
            flatten(adapters), cfg.eps);
        return relative_error(flatten(grad), numeric);
    });
}

std::vector<SuiteResult> run_all_gradchecks(const GradcheckConfig& cfg) {
    return {check_ota_loss_grad(cfg),   check_km_loss_grad(cfg), check_infonce_grad(cfg),
            check_adapter_backward(cfg), check_mcl_chain(cfg),   check_trainer_grad(cfg)};
}

}  // namespace tsjm

#include "tsjm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include "tsjm/errors.hpp"

namespace tsjm {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning rate must be finite and >= 0");
    }
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("temperature must be > 0");
    for (double l : {lambda_cl, lambda_ota, lambda_km}) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("loss weights must be finite and >= 0");
    }
    if (lambda_cl == 0.0 && lambda_ota == 0.0 && lambda_km == 0.0) {
        throw std::invalid_argument("at least one loss weight must be > 0");
    }
    if (batch_size == 0 || batches == 0 || way == 0 || shot == 0) {
        throw std::invalid_argument("batch_size, batches, way and shot must be >= 1");
    }
}

namespace {

// Picks k distinct records, one per class in shuffled class order while
// classes last, then any unused record.
std::vector<const VideoRecord*> pick_spread(const FeatureStore& store, std::size_t k, std::mt19937_64& rng) {
    if (k > store.records.size()) {
        throw DomainError("need " + std::to_string(k) + " records, store has " +
                          std::to_string(store.records.size()));
    }
    auto by_class = store.records_by_class();
    std::vector<std::size_t> class_order(by_class.size());
    std::iota(class_order.begin(), class_order.end(), 0);
    std::shuffle(class_order.begin(), class_order.end(), rng);
    for (auto& idx : by_class) std::shuffle(idx.begin(), idx.end(), rng);

    std::vector<const VideoRecord*> out;
    for (std::size_t round = 0; out.size() < k; ++round) {
        for (std::size_t c : class_order) {
            if (round < by_class[c].size() && out.size() < k) out.push_back(&store.records[by_class[c][round]]);
        }
    }
    return out;
}

enum class Mode { Forward, Grad, Replay };

struct Slot {
    const VideoRecord* rec;
    FeatureSequence rgb;
    FeatureSequence flow;
    Matrix g_rgb;
    Matrix g_flow;

    const FeatureSequence& seq(Modality m) const { return m == Modality::Rgb ? rgb : flow; }
    Matrix& grad(Modality m) { return m == Modality::Rgb ? g_rgb : g_flow; }
};

class BatchEvaluator {
public:
    BatchEvaluator(const TrainBatch& batch, const AdapterPair& adapters, const TrainConfig& cfg, Mode mode,
                   FrozenStructure* frozen)
        : batch_(batch), adapters_(adapters), cfg_(cfg), mode_(mode), frozen_(frozen) {}

    LossBreakdown run(AdapterPair* grad) {
        const Episode& ep = batch_.episode;
        if (ep.queries.empty()) throw std::invalid_argument("training batch has no queries");
        support_.assign(ep.way, {});
        for (std::size_t c = 0; c < ep.way; ++c)
            for (const VideoRecord* r : ep.support[c]) support_[c].push_back(add_slot(r));
        for (const auto& q : ep.queries) query_.push_back(add_slot(q.record));
        for (const VideoRecord* r : batch_.contrastive) contrastive_.push_back(add_slot(r));

        LossBreakdown out;
        for (Modality m : {Modality::Rgb, Modality::Flow}) {
            out.ota += ota_term(m);
            out.km += km_term(m);
        }
        out.cl = cl_term();
        out.total = cfg_.lambda_cl * out.cl + cfg_.lambda_ota * out.ota + cfg_.lambda_km * out.km;

        if (grad) {
            for (auto& s : slots_) {
                adapter_backward_accumulate(s.rec->rgb, adapters_.rgb, s.g_rgb, grad->rgb);
                adapter_backward_accumulate(s.rec->flow, adapters_.flow, s.g_flow, grad->flow);
            }
        }
        return out;
    }

private:
    bool wants_grad(double lambda) const { return mode_ == Mode::Grad && lambda > 0.0; }

    std::size_t add_slot(const VideoRecord* r) {
        slots_.push_back({r, adapter_forward(r->rgb, adapters_.rgb), adapter_forward(r->flow, adapters_.flow),
                          Matrix(r->rgb.length(), r->rgb.dim()), Matrix(r->flow.length(), r->flow.dim())});
        return slots_.size() - 1;
    }

    AlignmentPath path_for(const FeatureSequence& s, const FeatureSequence& q) {
        if (mode_ == Mode::Replay) {
            AlignmentPath p = frozen_->paths.at(path_cursor_++);
            p.total_cost = 0.0;
            for (auto [l, m] : p.steps) p.total_cost += 1.0 - cosine(s.frame(l), q.frame(m));
            return p;
        }
        AlignmentPath p = dtw(frame_distance_matrix(s, q));
        if (frozen_) frozen_->paths.push_back(p);
        return p;
    }

    PerfectMatching matching_for(const FeatureSequence& s, const FeatureSequence& q) {
        if (mode_ == Mode::Replay) {
            PerfectMatching pm = frozen_->matchings.at(match_cursor_++);
            pm.total_weight = 0.0;
            for (std::size_t l = 0; l < pm.assignment.size(); ++l) {
                pm.total_weight += cosine(s.frame(l), q.frame(pm.assignment[l]));
            }
            return pm;
        }
        if (s.length() != q.length()) throw std::invalid_argument("KM matching needs equal-length sequences");
        PerfectMatching pm = km_match(frame_similarity_matrix(s, q));
        if (frozen_) frozen_->matchings.push_back(pm);
        return pm;
    }

    // Mean over queries of ota_loss on class distances (mean over K supports).
    double ota_term(Modality m) {
        const Episode& ep = batch_.episode;
        const double inv_q = 1.0 / static_cast<double>(ep.queries.size());
        double total = 0.0;
        for (std::size_t qi = 0; qi < ep.queries.size(); ++qi) {
            Slot& q = slots_[query_[qi]];
            std::vector<double> dist(ep.way, 0.0);
            std::vector<std::vector<AlignmentPath>> paths(ep.way);
            for (std::size_t c = 0; c < ep.way; ++c) {
                const double inv_k = 1.0 / static_cast<double>(support_[c].size());
                for (std::size_t si : support_[c]) {
                    paths[c].push_back(path_for(slots_[si].seq(m), q.seq(m)));
                    dist[c] += inv_k * paths[c].back().total_cost;
                }
            }
            total += inv_q * ota_loss(dist, ep.queries[qi].label);
            if (!wants_grad(cfg_.lambda_ota)) continue;
            const auto g = ota_loss_grad(dist, ep.queries[qi].label);
            for (std::size_t c = 0; c < ep.way; ++c) {
                const double inv_k = 1.0 / static_cast<double>(support_[c].size());
                // D_v = sum over path of (1 - cos): d D_v / d cos = -1.
                const double up = -cfg_.lambda_ota * inv_q * inv_k * g[c];
                for (std::size_t k = 0; k < support_[c].size(); ++k) {
                    Slot& s = slots_[support_[c][k]];
                    for (auto [l, mm] : paths[c][k].steps) {
                        cosine_backward(s.seq(m).frame(l), q.seq(m).frame(mm), up, s.grad(m).row(l),
                                        q.grad(m).row(mm));
                    }
                }
            }
        }
        return total;
    }

    double km_term(Modality m) {
        const Episode& ep = batch_.episode;
        const double inv_q = 1.0 / static_cast<double>(ep.queries.size());
        double total = 0.0;
        for (std::size_t qi = 0; qi < ep.queries.size(); ++qi) {
            Slot& q = slots_[query_[qi]];
            std::vector<double> sim(ep.way, 0.0);
            std::vector<std::vector<PerfectMatching>> matchings(ep.way);
            for (std::size_t c = 0; c < ep.way; ++c) {
                const double inv_k = 1.0 / static_cast<double>(support_[c].size());
                for (std::size_t si : support_[c]) {
                    matchings[c].push_back(matching_for(slots_[si].seq(m), q.seq(m)));
                    sim[c] += inv_k * matchings[c].back().total_weight;
                }
            }
            total += inv_q * km_loss(sim, ep.queries[qi].label);
            if (!wants_grad(cfg_.lambda_km)) continue;
            const auto g = km_loss_grad(sim, ep.queries[qi].label);
            for (std::size_t c = 0; c < ep.way; ++c) {
                const double inv_k = 1.0 / static_cast<double>(support_[c].size());
                const double up = cfg_.lambda_km * inv_q * inv_k * g[c];
                for (std::size_t k = 0; k < support_[c].size(); ++k) {
                    Slot& s = slots_[support_[c][k]];
                    const auto& assign = matchings[c][k].assignment;
                    for (std::size_t l = 0; l < assign.size(); ++l) {
                        cosine_backward(s.seq(m).frame(l), q.seq(m).frame(assign[l]), up, s.grad(m).row(l),
                                        q.grad(m).row(assign[l]));
                    }
                }
            }
        }
        return total;
    }

    double cl_term() {
        if (contrastive_.empty()) return 0.0;
        std::vector<ContrastivePair> pairs;
        for (std::size_t si : contrastive_) pairs.push_back({slots_[si].rgb, slots_[si].flow});
        const Matrix sim = mcl_similarity_matrix(pairs);
        const double loss = infonce_loss(sim, cfg_.tau);
        if (wants_grad(cfg_.lambda_cl)) {
            const Matrix g = infonce_grad(sim, cfg_.tau);
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                for (std::size_t j = 0; j < pairs.size(); ++j) {
                    cross_attention_backward(pairs[i].rgb, pairs[j].flow, cfg_.lambda_cl * g(i, j),
                                             slots_[contrastive_[i]].g_rgb, slots_[contrastive_[j]].g_flow);
                }
            }
        }
        return loss;
    }

    const TrainBatch& batch_;
    const AdapterPair& adapters_;
    const TrainConfig& cfg_;
    Mode mode_;
    FrozenStructure* frozen_;
    std::size_t path_cursor_ = 0;
    std::size_t match_cursor_ = 0;

    std::vector<Slot> slots_;
    std::vector<std::vector<std::size_t>> support_;
    std::vector<std::size_t> query_;
    std::vector<std::size_t> contrastive_;
};

void add_scaled(AdapterParams& dst, const AdapterParams& src, double scale) {
    std::vector<std::span<const double>> blocks;
    src.for_each_block([&](std::span<const double> b) { blocks.push_back(b); });
    std::size_t i = 0;
    dst.for_each_block([&](std::span<double> b) {
        for (std::size_t k = 0; k < b.size(); ++k) b[k] += scale * blocks[i][k];
        ++i;
    });
}

bool all_finite(const AdapterPair& p) {
    bool ok = true;
    for (const auto* a : {&p.rgb, &p.flow}) {
        a->for_each_block([&](std::span<const double> b) {
            for (double v : b) ok = ok && std::isfinite(v);
        });
    }
    return ok;
}

}  // namespace

TrainBatch sample_train_batch(const FeatureStore& store, const TrainConfig& cfg, std::uint64_t seed) {
    TrainBatch batch;
    batch.episode = sample_episode(store, cfg.way, cfg.shot, 1, seed);
    std::mt19937_64 rng(episode_seed(seed, 1));
    batch.contrastive = pick_spread(store, cfg.batch_size, rng);
    return batch;
}

LossBreakdown total_loss(const TrainBatch& batch, const AdapterPair& adapters, const TrainConfig& cfg) {
    return BatchEvaluator(batch, adapters, cfg, Mode::Forward, nullptr).run(nullptr);
}

LossBreakdown total_loss_grad(const TrainBatch& batch, const AdapterPair& adapters, const TrainConfig& cfg,
                              AdapterPair& grad, FrozenStructure* record) {
    return BatchEvaluator(batch, adapters, cfg, Mode::Grad, record).run(&grad);
}

LossBreakdown total_loss_frozen(const TrainBatch& batch, const AdapterPair& adapters, const TrainConfig& cfg,
                                const FrozenStructure& frozen) {
    auto copy = frozen;
    return BatchEvaluator(batch, adapters, cfg, Mode::Replay, &copy).run(nullptr);
}

AdapterPair initial_adapters(std::size_t dim, std::size_t bottleneck, std::uint64_t seed) {
    return {AdapterParams::init(dim, bottleneck, episode_seed(seed, 0)),
            AdapterParams::init(dim, bottleneck, episode_seed(seed, 1))};
}

TrainResult train(const FeatureStore& store, const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t bottleneck = cfg.bottleneck ? cfg.bottleneck : std::max<std::size_t>(1, store.dim / 4);
    TrainResult result{initial_adapters(store.dim, bottleneck, cfg.seed), {}};

    std::vector<TrainBatch> batches;
    for (std::size_t i = 0; i < cfg.batches; ++i) {
        batches.push_back(sample_train_batch(store, cfg, episode_seed(cfg.seed ^ 0x5EEDBA7Cull, i)));
    }
    const double inv_b = 1.0 / static_cast<double>(batches.size());

    for (std::size_t epoch = 0;; ++epoch) {
        AdapterPair grad{AdapterParams::zeros(store.dim, bottleneck), AdapterParams::zeros(store.dim, bottleneck)};
        const bool last = epoch == cfg.epochs;
        const auto diverged = [&] {
            return DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch));
        };
        LossBreakdown mean;
        try {
            for (const auto& b : batches) {
                const auto l = last ? total_loss(b, result.adapters, cfg)
                                    : total_loss_grad(b, result.adapters, cfg, grad);
                mean.total += inv_b * l.total;
                mean.cl += inv_b * l.cl;
                mean.ota += inv_b * l.ota;
                mean.km += inv_b * l.km;
            }
        } catch (const std::invalid_argument&) {
            // The same batches evaluated cleanly at epoch 0, so this is the parameters blowing up.
            if (epoch == 0) throw;
            throw diverged();
        }
        if (!std::isfinite(mean.total) || !all_finite(result.adapters)) throw diverged();
        result.trajectory.push_back({epoch, mean});
        if (last) break;
        add_scaled(result.adapters.rgb, grad.rgb, -cfg.learning_rate * inv_b);
        add_scaled(result.adapters.flow, grad.flow, -cfg.learning_rate * inv_b);
    }
    return result;
}

double retrieval_probe(std::span<const VideoRecord> pairs, const AdapterPair* adapters) {
    if (pairs.size() < 2) throw std::invalid_argument("retrieval_probe needs at least 2 pairs");
    std::vector<ContrastivePair> batch;
    for (const auto& r : pairs) {
        if (adapters) {
            batch.push_back({adapter_forward(r.rgb, adapters->rgb), adapter_forward(r.flow, adapters->flow)});
        } else {
            batch.push_back({r.rgb, r.flow});
        }
    }
    const Matrix sim = mcl_similarity_matrix(batch);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sim.rows(); ++i) {
        const auto row = sim.row(i);
        hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == i;
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double retrieval_probe(const FeatureStore& store, const AdapterPair* adapters, std::size_t k,
                       std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("retrieval_probe needs k >= 2");
    std::mt19937_64 rng(seed);
    std::vector<VideoRecord> picked;
    for (const VideoRecord* r : pick_spread(store, k, rng)) picked.push_back(*r);
    return retrieval_probe(picked, adapters);
}

void write_trajectory_csv(std::ostream& out, std::span<const EpochLoss> trajectory) {
    out.precision(10);
    out << "epoch,total,l_cl,l_ota,l_km\n";
    for (const auto& e : trajectory) {
        out << e.epoch << ',' << e.loss.total << ',' << e.loss.cl << ',' << e.loss.ota << ',' << e.loss.km << '\n';
    }
}

}  // namespace tsjm

// tsjm: generate synthetic stores, train adapters, evaluate episodes,
// inspect matchings and run gradient checks. Payload goes to stdout,
// diagnostics to stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsjm/bgm.hpp"
#include "tsjm/episodic.hpp"
#include "tsjm/errors.hpp"
#include "tsjm/featurestore.hpp"
#include "tsjm/gradcheck.hpp"
#include "tsjm/mcl.hpp"
#include "tsjm/otm.hpp"
#include "tsjm/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3, kDomain = 4 };

void require_writable(const fs::path& path, const std::string& flag) {
    const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) throw tsjm::IoError(flag + ": directory does not exist: " + parent.string());
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw tsjm::IoError("cannot open for writing: " + path.string());
    return out;
}

struct GenOpts {
    tsjm::SynthConfig synth;
    std::vector<double> warp{0.5, 2.0};
    std::string out;
};

struct TrainOpts {
    tsjm::TrainConfig train;
    std::string features;
    std::vector<double> lambda{1.0, 1.0, 1.0};
    std::string out_adapters;
};

struct EvalOpts {
    tsjm::EvalConfig eval;
    std::string features;
    std::string adapters;
    std::vector<double> weights{0.25, 0.25, 0.25, 0.25};
    std::string report = "json";
    std::string report_out = "episodes.csv";
    std::string plot_data;
};

struct MatchOpts {
    std::string features;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::string method = "joint";
    std::string modality = "rgb";
    std::string dump;
};

struct GradOpts {
    tsjm::GradcheckConfig check;
    double tol = 1e-4;
};

int run_gen(const GenOpts& o) {
    require_writable(o.out, "--out");
    tsjm::SynthConfig cfg = o.synth;
    cfg.warp_min = o.warp[0];
    cfg.warp_max = o.warp[1];
    const auto store = tsjm::gen_synthetic(cfg);
    tsjm::save_store(store, o.out);
    std::cout << json{{"path", o.out},
                      {"records", store.records.size()},
                      {"classes", store.num_classes},
                      {"frames", cfg.frames},
                      {"dim", store.dim}}
                     .dump()
              << '\n';
    return kOk;
}

int run_train(TrainOpts o) {
    if (!o.out_adapters.empty()) require_writable(o.out_adapters, "--out-adapters");
    o.train.lambda_cl = o.lambda[0];
    o.train.lambda_ota = o.lambda[1];
    o.train.lambda_km = o.lambda[2];
    o.train.validate();
    const auto store = tsjm::load_store(o.features);
    const auto result = tsjm::train(store, o.train);
    tsjm::write_trajectory_csv(std::cout, result.trajectory);
    if (!o.out_adapters.empty()) tsjm::save_adapters(result.adapters, o.out_adapters);
    const auto& first = result.trajectory.front().loss;
    const auto& last = result.trajectory.back().loss;
    std::cerr << "train: total " << first.total << " -> " << last.total << ", l_cl " << first.cl << " -> "
              << last.cl << '\n';
    return kOk;
}

json report_json(const tsjm::EvalReport& r) {
    const auto& b = r.branch_accuracy;
    return {{"mean_accuracy", r.mean_accuracy},
            {"ci95", r.ci95_halfwidth},
            {"episodes", r.episodes},
            {"branch_accuracies",
             {{"ota_rgb", b[0]}, {"ota_flow", b[1]}, {"km_rgb", b[2]}, {"km_flow", b[3]}, {"fused", r.mean_accuracy}}}};
}

int run_eval(EvalOpts o) {
    if (o.report == "csv") require_writable(o.report_out, "--report-out");
    if (!o.plot_data.empty()) require_writable(o.plot_data, "--plot-data");
    std::copy(o.weights.begin(), o.weights.end(), o.eval.weights.w.begin());
    o.eval.weights.validate();

    const auto store = tsjm::load_store(o.features);
    std::optional<tsjm::AdapterPair> adapters;
    if (!o.adapters.empty()) {
        adapters = tsjm::load_adapters(o.adapters);
        if (adapters->rgb.dim() != store.dim) {
            throw tsjm::DomainError("adapters have dim " + std::to_string(adapters->rgb.dim()) + ", store has " +
                                    std::to_string(store.dim));
        }
    }
    const tsjm::AdapterPair* ap = adapters ? &*adapters : nullptr;
    const auto report = tsjm::evaluate(store, o.eval, ap);

    json out = report_json(report);
    out["config"] = {{"features", o.features},
                     {"adapters", o.adapters},
                     {"n_way", o.eval.way},
                     {"k_shot", o.eval.shot},
                     {"queries_per_class", o.eval.queries_per_class},
                     {"episodes", o.eval.episodes},
                     {"weights", o.weights},
                     {"seed", o.eval.seed}};

    if (o.report == "csv") {
        auto csv = open_out(o.report_out);
        csv.precision(17);
        csv << "episode,fused,ota_rgb,ota_flow,km_rgb,km_flow\n";
        for (std::size_t i = 0; i < report.per_episode.size(); ++i) {
            const auto& e = report.per_episode[i];
            csv << i << ',' << e.fused << ',' << e.branch[0] << ',' << e.branch[1] << ',' << e.branch[2] << ','
                << e.branch[3] << '\n';
        }
    }
    if (!o.plot_data.empty()) {
        auto csv = open_out(o.plot_data);
        csv.precision(17);
        csv << "n_way,mean_accuracy,ci95,ota_rgb,ota_flow,km_rgb,km_flow\n";
        for (std::size_t n = 5; n <= 10; ++n) {
            tsjm::EvalConfig c = o.eval;
            c.way = n;
            tsjm::EvalReport r;
            try {
                r = tsjm::evaluate(store, c, ap);
            } catch (const tsjm::DomainError& err) {
                std::cerr << "plot-data: skipping N=" << n << ": " << err.what() << '\n';
                continue;
            }
            const auto& b = r.branch_accuracy;
            csv << n << ',' << r.mean_accuracy << ',' << r.ci95_halfwidth << ',' << b[0] << ',' << b[1] << ','
                << b[2] << ',' << b[3] << '\n';
        }
    }
    std::cout << out.dump() << '\n';
    return kOk;
}

const tsjm::VideoRecord& lookup(const tsjm::FeatureStore& store, std::uint32_t id) {
    const auto* r = store.find_video(id);
    if (!r) throw tsjm::DomainError("unknown video id " + std::to_string(id));
    return *r;
}

// out.csv -> out.dtw.csv
fs::path dump_path(const fs::path& base, const std::string& tag) {
    fs::path p = base;
    const std::string ext = base.has_extension() ? base.extension().string() : ".csv";
    return p.replace_extension(tag + ext);
}

int run_match(const MatchOpts& o) {
    if (!o.dump.empty()) require_writable(o.dump, "--dump");
    const auto store = tsjm::load_store(o.features);
    const auto& a = lookup(store, o.a);
    const auto& b = lookup(store, o.b);
    const auto modality = o.modality == "rgb" ? tsjm::Modality::Rgb : tsjm::Modality::Flow;
    const auto& sa = modality == tsjm::Modality::Rgb ? a.rgb : a.flow;
    const auto& sb = modality == tsjm::Modality::Rgb ? b.rgb : b.flow;

    json out{{"a", o.a}, {"b", o.b}, {"method", o.method}};
    auto dump_dtw = [&](const fs::path& p) {
        const auto d = tsjm::frame_distance_matrix(sa, sb);
        auto f = open_out(p);
        tsjm::write_alignment_csv(f, tsjm::dtw(d), d);
    };
    auto dump_km = [&](const fs::path& p) {
        const auto w = tsjm::frame_similarity_matrix(sa, sb);
        auto f = open_out(p);
        tsjm::write_matching_csv(f, tsjm::km_match(w), w);
    };

    if (o.method == "dtw") {
        out["modality"] = o.modality;
        out["distance"] = tsjm::video_distance_ota(sa, sb);
        if (!o.dump.empty()) dump_dtw(o.dump);
    } else if (o.method == "km") {
        out["modality"] = o.modality;
        out["similarity"] = tsjm::video_similarity_km(sa, sb);
        if (!o.dump.empty()) dump_km(o.dump);
    } else {
        out["ota_rgb"] = tsjm::video_distance_ota(a.rgb, b.rgb);
        out["ota_flow"] = tsjm::video_distance_ota(a.flow, b.flow);
        out["km_rgb"] = tsjm::video_similarity_km(a.rgb, b.rgb);
        out["km_flow"] = tsjm::video_similarity_km(a.flow, b.flow);
        if (!o.dump.empty()) {
            out["dump_modality"] = o.modality;
            dump_dtw(dump_path(o.dump, ".dtw"));
            dump_km(dump_path(o.dump, ".km"));
        }
    }
    std::cout << out.dump() << '\n';
    return kOk;
}

int run_gradcheck(const GradOpts& o) {
    json suites = json::array();
    bool pass = true;
    for (const auto& r : tsjm::run_all_gradchecks(o.check)) {
        const bool ok = r.max_rel_error < o.tol;
        if (!ok) std::cerr << "gradcheck: " << r.suite << " failed: " << r.max_rel_error << " >= " << o.tol << '\n';
        pass = pass && ok;
        suites.push_back({{"suite", r.suite}, {"max_rel_error", r.max_rel_error}, {"instances", r.instances}, {"pass", ok}});
    }
    std::cout << json{{"eps", o.check.eps},
                      {"tol", o.tol},
                      {"instances", o.check.instances},
                      {"seed", o.check.seed},
                      {"suites", suites},
                      {"pass", pass}}
                     .dump()
              << '\n';
    return pass ? kOk : kCheckFailed;
}

const CLI::Validator kAtLeastOne(
    [](std::string& in) -> std::string {
        try {
            if (std::stoll(in) >= 1) return {};
        } catch (const std::exception&) {
        }
        return "must be an integer >= 1, got " + in;
    },
    "INT>=1");

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stream joint matching for few-shot action recognition"};
    app.require_subcommand(1);

    GenOpts gen;
    auto* g = app.add_subcommand("gen", "Write a synthetic feature store");
    g->add_option("--classes", gen.synth.num_classes, "Number of classes")->check(kAtLeastOne);
    g->add_option("--per-class", gen.synth.videos_per_class, "Videos per class")->check(kAtLeastOne);
    g->add_option("--frames", gen.synth.frames, "Frames per video (T)")->check(kAtLeastOne);
    g->add_option("--dim", gen.synth.dim, "Feature dimension (D)")->check(kAtLeastOne);
    g->add_option("--subactions", gen.synth.num_subactions, "Sub-actions per class")->check(kAtLeastOne);
    g->add_option("--warp", gen.warp, "Speed warp range lo,hi")->delimiter(',')->expected(2)->capture_default_str();
    g->add_flag("--permute,!--no-permute", gen.synth.permute_subactions, "Shuffle sub-action order per video (default on)");
    g->add_option("--noise", gen.synth.noise_sigma, "Gaussian noise sigma")->check(CLI::NonNegativeNumber);
    g->add_option("--seed", gen.synth.seed, "RNG seed");
    g->add_option("--out", gen.out, "Output FSET path")->required();

    TrainOpts tr;
    auto* t = app.add_subcommand("train", "Train the modality adapters; trajectory CSV on stdout");
    t->add_option("--features", tr.features, "FSET path")->required();
    t->add_option("--epochs", tr.train.epochs, "Epochs")->capture_default_str();
    t->add_option("--lr", tr.train.learning_rate, "Learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
    t->add_option("--tau", tr.train.tau, "InfoNCE temperature")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--lambda", tr.lambda, "Loss weights cl,ota,km")->delimiter(',')->expected(3);
    t->add_option("--bottleneck", tr.train.bottleneck, "Adapter bottleneck (0: dim/4)");
    t->add_option("--batch-size", tr.train.batch_size, "Contrastive pairs per batch")->check(kAtLeastOne);
    t->add_option("--batches", tr.train.batches, "Fixed batches per epoch")->check(kAtLeastOne);
    t->add_option("--n-way", tr.train.way, "Classes per training episode")->check(kAtLeastOne);
    t->add_option("--seed", tr.train.seed, "RNG seed");
    t->add_option("--out-adapters", tr.out_adapters, "ADPT checkpoint path");

    EvalOpts ev;
    auto* e = app.add_subcommand("eval", "Run N-way K-shot episodes; JSON report on stdout");
    e->add_option("--features", ev.features, "FSET path")->required();
    e->add_option("--n-way", ev.eval.way, "Classes per episode")->check(kAtLeastOne);
    e->add_option("--k-shot", ev.eval.shot, "Supports per class")->check(kAtLeastOne);
    e->add_option("--queries-per-class", ev.eval.queries_per_class, "Queries per class")->check(kAtLeastOne);
    e->add_option("--episodes", ev.eval.episodes, "Episodes")->check(kAtLeastOne);
    e->add_option("--weights", ev.weights, "Fusion weights ota_rgb,ota_flow,km_rgb,km_flow")
        ->delimiter(',')
        ->expected(4)
        ->check(CLI::NonNegativeNumber);
    e->add_option("--report", ev.report, "json, or csv to also write per-episode accuracies")
        ->check(CLI::IsMember({"json", "csv"}));
    e->add_option("--report-out", ev.report_out, "Per-episode CSV path for --report csv")->capture_default_str();
    e->add_option("--plot-data", ev.plot_data, "Write an N=5..10 sweep CSV here");
    e->add_option("--threads", ev.eval.threads, "Worker threads")->check(kAtLeastOne);
    e->add_option("--adapters", ev.adapters, "ADPT checkpoint to apply");
    e->add_option("--seed", ev.eval.seed, "RNG seed");

    MatchOpts ma;
    auto* m = app.add_subcommand("match", "Align or match two videos; JSON on stdout");
    m->add_option("--features", ma.features, "FSET path")->required();
    m->add_option("--a", ma.a, "First video id")->required();
    m->add_option("--b", ma.b, "Second video id")->required();
    m->add_option("--method", ma.method, "dtw, km or joint")->check(CLI::IsMember({"dtw", "km", "joint"}));
    m->add_option("--modality", ma.modality, "rgb or flow")->check(CLI::IsMember({"rgb", "flow"}));
    m->add_option("--dump", ma.dump, "CSV dump of the path or matching");
    std::uint64_t unused_seed = 0;
    m->add_option("--seed", unused_seed, "Accepted for a uniform flag set; matching is deterministic")->group("");

    GradOpts gc;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference check of all analytic gradients");
    c->add_option("--eps", gc.check.eps, "Central difference step")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--tol", gc.tol, "Pass threshold on relative error")->check(CLI::NonNegativeNumber)->capture_default_str();
    c->add_option("--instances", gc.check.instances, "Instances per suite")->check(kAtLeastOne);
    c->add_option("--seed", gc.check.seed, "RNG seed");

    try {
        app.parse(argc, argv);
        if (g->parsed()) {
            if (gen.warp[0] <= 0.0 || gen.warp[1] < gen.warp[0]) {
                throw CLI::ValidationError("--warp", "need 0 < lo <= hi");
            }
            if (gen.synth.num_subactions > gen.synth.frames) {
                throw CLI::ValidationError("--subactions", "must not exceed --frames");
            }
            return run_gen(gen);
        }
        if (t->parsed()) return run_train(tr);
        if (e->parsed()) return run_eval(ev);
        if (m->parsed()) return run_match(ma);
        return run_gradcheck(gc);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    } catch (const tsjm::IoError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kIo;
    } catch (const tsjm::FormatError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kIo;
    } catch (const tsjm::DomainError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kDomain;
    } catch (const tsjm::DivergenceError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kCheckFailed;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kCheckFailed;
    }
}

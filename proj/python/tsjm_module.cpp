#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "tsjm/bgm.hpp"
#include "tsjm/episodic.hpp"
#include "tsjm/errors.hpp"
#include "tsjm/featurestore.hpp"
#include "tsjm/gradcheck.hpp"
#include "tsjm/mcl.hpp"
#include "tsjm/otm.hpp"
#include "tsjm/simkernels.hpp"
#include "tsjm/trainer.hpp"

namespace py = pybind11;
using namespace tsjm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
    return std::vector<double>(a.data(), a.data() + a.shape(0));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.flat().begin(), m.flat().end(), out.mutable_data());
    return out;
}

Array to_array(const std::vector<double>& v) {
    Array out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

FeatureSequence to_sequence(const Array& a, Modality m = Modality::Rgb) {
    FeatureSequence s{to_matrix(a), m};
    s.validate();
    return s;
}

py::dict report_to_dict(const EvalReport& r) {
    py::dict d;
    d["mean_accuracy"] = r.mean_accuracy;
    d["ci95"] = r.ci95_halfwidth;
    d["episodes"] = r.episodes;
    py::dict branches;
    branches["ota_rgb"] = r.branch_accuracy[0];
    branches["ota_flow"] = r.branch_accuracy[1];
    branches["km_rgb"] = r.branch_accuracy[2];
    branches["km_flow"] = r.branch_accuracy[3];
    d["branch_accuracies"] = branches;
    std::vector<double> fused;
    fused.reserve(r.per_episode.size());
    for (const auto& e : r.per_episode) fused.push_back(e.fused);
    d["per_episode"] = to_array(fused);
    return d;
}

}  // namespace

PYBIND11_MODULE(tsjm, m) {
    m.doc() = "Temporal-semantic joint matching for few-shot action recognition";

    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::enum_<Modality>(m, "Modality").value("RGB", Modality::Rgb).value("FLOW", Modality::Flow);

    py::class_<VideoRecord>(m, "VideoRecord")
        .def_readonly("video_id", &VideoRecord::video_id)
        .def_readonly("class_id", &VideoRecord::class_id)
        .def_property_readonly("rgb", [](const VideoRecord& r) { return to_array(r.rgb.frames); })
        .def_property_readonly("flow", [](const VideoRecord& r) { return to_array(r.flow.frames); });

    py::class_<FeatureStore>(m, "FeatureStore")
        .def_readonly("num_classes", &FeatureStore::num_classes)
        .def_readonly("dim", &FeatureStore::dim)
        .def("__len__", [](const FeatureStore& s) { return s.records.size(); })
        .def("__getitem__", [](const FeatureStore& s, std::size_t i) -> const VideoRecord& {
            if (i >= s.records.size()) throw py::index_error();
            return s.records[i];
        }, py::return_value_policy::reference_internal)
        .def("find_video", [](const FeatureStore& s, std::uint32_t id) -> const VideoRecord& {
            const VideoRecord* r = s.find_video(id);
            if (!r) throw DomainError("unknown video id " + std::to_string(id));
            return *r;
        }, py::return_value_policy::reference_internal)
        .def("save", [](const FeatureStore& s, const std::filesystem::path& p) { save_store(s, p); })
        .def("to_bytes", [](const FeatureStore& s) {
            const auto bytes = encode_store(s);
            return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        });

    m.def("load_store", [](const std::filesystem::path& p) { return load_store(p); }, py::arg("path"));
    m.def("store_from_bytes", [](const py::bytes& b) {
        const std::string s = b;
        return decode_store(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    }, py::arg("data"));
    m.def("gen_synthetic",
          [](std::size_t classes, std::size_t per_class, std::size_t frames, std::size_t dim,
             std::size_t subactions, double warp_min, double warp_max, bool permute, double noise,
             std::uint64_t seed) {
              SynthConfig c;
              c.num_classes = classes;
              c.videos_per_class = per_class;
              c.frames = frames;
              c.dim = dim;
              c.num_subactions = subactions;
              c.warp_min = warp_min;
              c.warp_max = warp_max;
              c.permute_subactions = permute;
              c.noise_sigma = noise;
              c.seed = seed;
              return gen_synthetic(c);
          },
          py::arg("classes") = 24, py::arg("per_class") = 20, py::arg("frames") = 8, py::arg("dim") = 32,
          py::arg("subactions") = 4, py::arg("warp_min") = 0.5, py::arg("warp_max") = 2.0,
          py::arg("permute") = true, py::arg("noise") = 0.3, py::arg("seed") = 0);
    m.def("split_holdout", &split_holdout, py::arg("store"), py::arg("holdout_per_class"));

    m.def("cosine", [](const Array& a, const Array& b) {
        const auto x = to_vector(a), y = to_vector(b);
        return cosine(x, y);
    }, py::arg("a"), py::arg("b"));
    m.def("frame_distance_matrix", [](const Array& s, const Array& q) {
        return to_array(frame_distance_matrix(to_sequence(s), to_sequence(q)).values);
    }, py::arg("support"), py::arg("query"));
    m.def("frame_similarity_matrix", [](const Array& s, const Array& q) {
        return to_array(frame_similarity_matrix(to_sequence(s), to_sequence(q)).values);
    }, py::arg("support"), py::arg("query"));
    m.def("cross_attention_similarity", [](const Array& x, const Array& y) {
        return cross_attention_similarity(to_sequence(x), to_sequence(y));
    }, py::arg("x"), py::arg("y"));

    m.def("dtw", [](const Array& d) {
        const auto path = dtw(CostMatrix{to_matrix(d), CostKind::Distance});
        return py::make_tuple(path.steps, path.total_cost);
    }, py::arg("distances"), "Returns (steps, total_cost).");
    m.def("km_match", [](const Array& w) {
        const auto match = km_match(CostMatrix{to_matrix(w), CostKind::Similarity});
        return py::make_tuple(match.assignment, match.total_weight);
    }, py::arg("weights"), "Returns (assignment, total_weight).");
    m.def("video_distance_ota", [](const Array& s, const Array& q) {
        return video_distance_ota(to_sequence(s), to_sequence(q));
    }, py::arg("support"), py::arg("query"));
    m.def("video_similarity_km", [](const Array& s, const Array& q) {
        return video_similarity_km(to_sequence(s), to_sequence(q));
    }, py::arg("support"), py::arg("query"));

    m.def("ota_loss", [](const Array& d, std::size_t y) { return ota_loss(to_vector(d), y); },
          py::arg("distances"), py::arg("true_class"));
    m.def("ota_loss_grad", [](const Array& d, std::size_t y) { return to_array(ota_loss_grad(to_vector(d), y)); },
          py::arg("distances"), py::arg("true_class"));
    m.def("km_loss", [](const Array& s, std::size_t y) { return km_loss(to_vector(s), y); },
          py::arg("similarities"), py::arg("true_class"));
    m.def("km_loss_grad", [](const Array& s, std::size_t y) { return to_array(km_loss_grad(to_vector(s), y)); },
          py::arg("similarities"), py::arg("true_class"));
    m.def("infonce_loss", [](const Array& s, double tau) { return infonce_loss(to_matrix(s), tau); },
          py::arg("similarity"), py::arg("tau") = kDefaultTemperature);
    m.def("infonce_grad", [](const Array& s, double tau) { return to_array(infonce_grad(to_matrix(s), tau)); },
          py::arg("similarity"), py::arg("tau") = kDefaultTemperature);

    py::class_<AdapterPair>(m, "AdapterPair")
        .def_property_readonly("dim", [](const AdapterPair& a) { return a.rgb.dim(); })
        .def_property_readonly("bottleneck", [](const AdapterPair& a) { return a.rgb.bottleneck(); })
        .def("save", [](const AdapterPair& a, const std::filesystem::path& p) { save_adapters(a, p); })
        .def("apply", [](const AdapterPair& a, const Array& x, Modality mod) {
            return to_array(adapter_forward(to_sequence(x, mod), a.for_modality(mod)).frames);
        }, py::arg("frames"), py::arg("modality"));
    m.def("initial_adapters", &initial_adapters, py::arg("dim"), py::arg("bottleneck") = 0, py::arg("seed") = 0);
    m.def("load_adapters", [](const std::filesystem::path& p) { return load_adapters(p); }, py::arg("path"));

    m.def("evaluate",
          [](const FeatureStore& store, std::size_t way, std::size_t shot, std::size_t queries,
             std::size_t episodes, std::array<double, kNumBranches> weights, std::uint64_t seed,
             std::size_t threads, const AdapterPair* adapters) {
              EvalConfig c;
              c.way = way;
              c.shot = shot;
              c.queries_per_class = queries;
              c.episodes = episodes;
              c.weights.w = weights;
              c.seed = seed;
              c.threads = threads;
              EvalReport r;
              {
                  py::gil_scoped_release release;
                  r = evaluate(store, c, adapters);
              }
              return report_to_dict(r);
          },
          py::arg("store"), py::arg("way") = 5, py::arg("shot") = 1, py::arg("queries_per_class") = 1,
          py::arg("episodes") = 1000, py::arg("weights") = std::array<double, kNumBranches>{0.25, 0.25, 0.25, 0.25},
          py::arg("seed") = 0, py::arg("threads") = 1, py::arg("adapters") = nullptr);

    m.def("train",
          [](const FeatureStore& store, std::size_t epochs, double lr, double tau,
             std::array<double, 3> lambdas, std::size_t bottleneck, std::size_t batch_size,
             std::size_t batches, std::size_t way, std::uint64_t seed) {
              TrainConfig c;
              c.epochs = epochs;
              c.learning_rate = lr;
              c.tau = tau;
              c.lambda_cl = lambdas[0];
              c.lambda_ota = lambdas[1];
              c.lambda_km = lambdas[2];
              c.bottleneck = bottleneck;
              c.batch_size = batch_size;
              c.batches = batches;
              c.way = way;
              c.seed = seed;
              TrainResult r;
              {
                  py::gil_scoped_release release;
                  r = train(store, c);
              }
              std::ostringstream csv;
              write_trajectory_csv(csv, r.trajectory);
              return py::make_tuple(r.adapters, csv.str());
          },
          py::arg("store"), py::arg("epochs") = 200, py::arg("lr") = 1e-5, py::arg("tau") = kDefaultTemperature,
          py::arg("lambdas") = std::array<double, 3>{1.0, 1.0, 1.0}, py::arg("bottleneck") = 0,
          py::arg("batch_size") = 8, py::arg("batches") = 32, py::arg("way") = 5, py::arg("seed") = 0,
          "Returns (adapters, trajectory_csv).");

    m.def("retrieval_probe",
          [](const FeatureStore& store, const AdapterPair* adapters, std::size_t k, std::uint64_t seed) {
              return retrieval_probe(store, adapters, k, seed);
          },
          py::arg("store"), py::arg("adapters") = nullptr, py::arg("k") = 32, py::arg("seed") = 0);

    m.def("gradcheck", [](double eps, std::size_t instances, std::uint64_t seed) {
        py::dict out;
        for (const auto& s : run_all_gradchecks(GradcheckConfig{eps, instances, seed}))
            out[py::str(s.suite)] = s.max_rel_error;
        return out;
    }, py::arg("eps") = 1e-5, py::arg("instances") = 50, py::arg("seed") = 0);
}

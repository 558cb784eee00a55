#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "slog/captioner.hpp"
#include "slog/core_data.hpp"
#include "slog/engine.hpp"
#include "slog/errors.hpp"
#include "slog/eval_harness.hpp"
#include "slog/judges.hpp"
#include "slog/report_labeler.hpp"
#include "slog/surrogate.hpp"
#include "slog/text_metrics.hpp"

namespace py = pybind11;
using namespace slog;

namespace {

std::vector<int> states_to_ints(const std::vector<FindingState>& states) {
    std::vector<int> out;
    out.reserve(states.size());
    for (auto s : states) out.push_back(value_of(s));
    return out;
}

std::vector<FindingState> ints_to_states(const std::vector<int>& values) {
    std::vector<FindingState> out;
    out.reserve(values.size());
    for (int v : values) out.push_back(finding_from_int(v));
    return out;
}

const FindingOntology& ontology_arg(const std::optional<FindingOntology>& o) {
    return o ? *o : default_ontology();
}

}  // namespace

PYBIND11_MODULE(_slog, mod) {
    mod.doc() = "Surrogate-guided captioner fine-tuning (C++ core)";

    auto base = py::register_exception<Error>(mod, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(mod, "ConfigError", base.ptr());
    py::register_exception<ParseError>(mod, "ParseError", base.ptr());
    py::register_exception<FitError>(mod, "FitError", base.ptr());
    py::register_exception<NotFound>(mod, "NotFound", base.ptr());
    py::register_exception<Conflict>(mod, "Conflict", base.ptr());

    py::class_<FindingOntology>(mod, "FindingOntology")
        .def_readonly("labels", &FindingOntology::labels)
        .def_readonly("keywords", &FindingOntology::keywords)
        .def_readonly("negation_cues", &FindingOntology::negation_cues)
        .def_readonly("uncertainty_cues", &FindingOntology::uncertainty_cues)
        .def("__len__", &FindingOntology::size);
    mod.def("default_ontology", &default_ontology, py::return_value_policy::copy);
    mod.def("load_ontology", &load_ontology, py::arg("path"));

    // text
    mod.def("bleu4", &bleu4, py::arg("candidate"), py::arg("reference"));
    mod.def(
        "label_text",
        [](const std::string& text, const std::optional<FindingOntology>& ontology) {
            return states_to_ints(label_text(text, ontology_arg(ontology)).states);
        },
        py::arg("text"), py::arg("ontology") = py::none(),
        "Per-label states (1 present, -1 absent, 0 otherwise).");
    mod.def(
        "info_score", [](const std::vector<int>& states) { return info_score(ints_to_states(states)); },
        py::arg("states"));

    // data
    py::class_<GeneratorConfig>(mod, "GeneratorConfig")
        .def(py::init<>())
        .def_readwrite("n", &GeneratorConfig::n)
        .def_readwrite("d", &GeneratorConfig::d)
        .def_readwrite("L", &GeneratorConfig::L)
        .def_readwrite("p_present", &GeneratorConfig::p_present)
        .def_readwrite("p_absent", &GeneratorConfig::p_absent)
        .def_readwrite("p_ambiguous", &GeneratorConfig::p_ambiguous)
        .def_readwrite("noise_std", &GeneratorConfig::noise_std)
        .def_readwrite("split_proportions", &GeneratorConfig::split_proportions)
        .def_readwrite("absent_mention_prob", &GeneratorConfig::absent_mention_prob)
        .def_readwrite("seed", &GeneratorConfig::seed);

    py::class_<Scan>(mod, "Scan")
        .def_readonly("id", &Scan::id)
        .def_readonly("x", &Scan::x)
        .def_property_readonly("findings", [](const Scan& s) { return states_to_ints(s.findings); })
        .def_readonly("report", &Scan::report)
        .def_property_readonly("split", [](const Scan& s) { return std::string(to_string(s.split)); });

    py::class_<Dataset>(mod, "Dataset")
        .def_readonly("scans", &Dataset::scans)
        .def_readonly("config_hash", &Dataset::config_hash)
        .def("__len__", [](const Dataset& d) { return d.scans.size(); })
        .def("by_id", &Dataset::by_id, py::return_value_policy::reference_internal)
        .def("split_sizes", [](const Dataset& d) {
            std::map<std::string, std::size_t> out;
            for (const auto& [k, v] : split_sizes(d)) out[std::string(to_string(k))] = v;
            return out;
        });

    mod.def("generate_dataset", py::overload_cast<const GeneratorConfig&>(&generate_dataset),
            py::arg("config") = GeneratorConfig{});
    mod.def("load_dataset", &load_dataset, py::arg("path"));
    mod.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));

    // captioner
    py::class_<CaptionerDims>(mod, "CaptionerDims")
        .def(py::init<>())
        .def_readwrite("d", &CaptionerDims::d)
        .def_readwrite("m", &CaptionerDims::m)
        .def_readwrite("K", &CaptionerDims::K)
        .def_readonly("V", &CaptionerDims::V);

    py::class_<CaptionerParams>(mod, "CaptionerParams")
        .def_static("random", &CaptionerParams::random, py::arg("dims"), py::arg("seed"), py::arg("scale") = 0.1)
        .def_readonly("dims", &CaptionerParams::dims)
        .def("flatten", &CaptionerParams::flatten)
        .def("assign", &CaptionerParams::assign)
        .def("parameter_count", &CaptionerParams::parameter_count);

    py::class_<Guidance>(mod, "Guidance")
        .def_readonly("tokens", &Guidance::tokens)
        .def_readonly("text", &Guidance::text)
        .def_readonly("z", &Guidance::z);

    mod.def("encode", &encode, py::arg("params"), py::arg("x"));
    mod.def(
        "decode",
        [](const CaptionerParams& p, const Eigen::VectorXd& z, std::optional<double> temperature,
           std::uint64_t seed) {
            return temperature ? decode(p, z, Sampling{*temperature, seed}) : decode(p, z);
        },
        py::arg("params"), py::arg("z"), py::arg("temperature") = py::none(), py::arg("seed") = 0,
        "Argmax decoding, or sampling when a temperature is given.");
    mod.def(
        "render",
        [](const std::vector<int>& tokens, const std::optional<FindingOntology>& ontology) {
            return render(tokens, ontology_arg(ontology));
        },
        py::arg("tokens"), py::arg("ontology") = py::none());
    mod.def(
        "generate",
        [](const CaptionerParams& p, const Eigen::VectorXd& x) { return generate(p, x, default_ontology()); },
        py::arg("params"), py::arg("x"));
    mod.def(
        "nll_loss",
        [](const CaptionerParams& p, const Eigen::VectorXd& x, const std::vector<int>& target) {
            auto r = nll_loss(p, x, target);
            return py::make_tuple(r.loss, r.grad.flatten());
        },
        py::arg("params"), py::arg("x"), py::arg("target"), "Returns (loss, flattened gradient).");
    mod.def(
        "pretrain",
        [](const Dataset& ds, int m, int epochs, double lr, std::uint64_t seed) {
            if (ds.scans.empty()) throw ConfigError("dataset is empty");
            const auto& ontology = default_ontology();
            const CaptionerDims dims{static_cast<int>(ds.scans.front().x.size()), m,
                                     static_cast<int>(ontology.size()), kVocabSize};
            const auto train = training_examples(ds, Split::Train, ontology);
            return pretrain(dims, train, {epochs, lr, 0.1, seed});
        },
        py::arg("dataset"), py::arg("m") = 8, py::arg("epochs") = 400, py::arg("lr") = 0.5, py::arg("seed") = 0);
    mod.def(
        "load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p).params; },
        py::arg("path"));

    // surrogate
    py::class_<SurrogateHyper>(mod, "SurrogateHyper")
        .def(py::init<>())
        .def(py::init([](double sigma, double ridge) { return SurrogateHyper{sigma, ridge}; }), py::arg("sigma"),
             py::arg("ridge"))
        .def_readwrite("sigma", &SurrogateHyper::sigma)
        .def_readwrite("ridge", &SurrogateHyper::ridge);

    py::class_<Surrogate>(mod, "Surrogate")
        .def_static(
            "fit",
            [](const Eigen::MatrixXd& z, const Eigen::VectorXd& q, const Eigen::VectorXd& w, double sigma,
               double ridge) { return Surrogate::fit(z, q, w, {sigma, ridge}); },
            py::arg("embeddings"), py::arg("targets"), py::arg("weights"), py::arg("sigma") = 1.0,
            py::arg("ridge") = 1e-2)
        .def("predict", &Surrogate::predict, py::arg("z"))
        .def("predict_grad", &Surrogate::predict_grad, py::arg("z"))
        .def_property_readonly("alpha", &Surrogate::alpha)
        .def_property_readonly("centers", &Surrogate::centers)
        .def_property_readonly("sigma", &Surrogate::sigma)
        .def_property_readonly("ridge", &Surrogate::ridge)
        .def_property_readonly("fit_id", &Surrogate::fit_id)
        .def_property_readonly("relative_residual", &Surrogate::relative_residual)
        .def("to_json", &Surrogate::to_json);

    // judges
    mod.def(
        "judge_informativeness",
        [](const std::string& text) { return judge_informativeness(text, default_ontology()); }, py::arg("text"));
    mod.def(
        "judge_fidelity",
        [](const std::string& text, const Scan& scan) { return judge_fidelity(text, scan, default_ontology()); },
        py::arg("text"), py::arg("scan"));
    mod.def(
        "simulate_decision",
        [](const std::string& text) {
            return simulate_decision(text, default_ontology()) == Decision::Diseased ? "diseased" : "healthy";
        },
        py::arg("text"));

    // loop and bootstrap
    py::class_<RoundMetrics>(mod, "RoundMetrics")
        .def_readonly("round", &RoundMetrics::round)
        .def_readonly("nll_validation", &RoundMetrics::nll_validation)
        .def_readonly("surrogate_rmse_validation", &RoundMetrics::surrogate_rmse_validation)
        .def_readonly("mean_judge_score_heldout", &RoundMetrics::mean_judge_score_heldout)
        .def_readonly("decision_accuracy_heldout", &RoundMetrics::decision_accuracy_heldout)
        .def_readonly("mean_surrogate_score_finetune", &RoundMetrics::mean_surrogate_score_finetune);

    mod.def(
        "run_loop",
        [](const Dataset& ds, const std::filesystem::path& run_dir, const std::string& judge, double lambda,
           int rounds, int batch, std::uint64_t seed, bool ablation) {
            LoopConfig config;
            config.judge = parse_judge(judge);
            if (config.judge == JudgeSource::Human) throw ConfigError("the human judge needs the annotation service");
            config.guide_weight = lambda;
            config.rounds = rounds;
            config.batch_per_round = batch;
            config.seed = seed;
            config.ablation = ablation;
            config.validate();
            OracleJudge oracle(config.judge, default_ontology());
            py::gil_scoped_release release;
            return run_loop(ds, default_ontology(), config, run_dir, oracle);
        },
        py::arg("dataset"), py::arg("run_dir"), py::arg("judge") = "fidelity", py::arg("lam") = 1.0,
        py::arg("rounds") = 5, py::arg("batch") = 32, py::arg("seed") = 0, py::arg("ablation") = false);

    mod.def(
        "run_bootstrap",
        [](const Dataset& ds, const CaptionerParams& params, bool tune, double sigma, double ridge) {
            BootstrapOptions opts;
            opts.tune = tune;
            opts.hyper = {sigma, ridge};
            const auto r = run_bootstrap(ds, params, default_ontology(), opts);
            py::dict out;
            out["sigma"] = r.hyper.sigma;
            out["ridge"] = r.hyper.ridge;
            out["test_rmse"] = r.test_rmse;
            out["test_score_std"] = r.test_score_std;
            out["ratio"] = r.ratio();
            py::list curve;
            for (const auto& p : r.curve) curve.append(py::make_tuple(p.n_train, p.train_rmse, p.validation_rmse));
            out["curve"] = curve;
            return out;
        },
        py::arg("dataset"), py::arg("params"), py::arg("tune") = false, py::arg("sigma") = 1.0,
        py::arg("ridge") = 1e-2);
}

#include "slog/cli.hpp"

#include <csignal>
#include <charconv>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "slog/captioner.hpp"
#include "slog/core_data.hpp"
#include "slog/engine.hpp"
#include "slog/errors.hpp"
#include "slog/eval_harness.hpp"
#include "slog/judges.hpp"
#include "slog/report_labeler.hpp"
#include "slog/service.hpp"
#include "slog/text_metrics.hpp"

namespace slog {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

FindingOntology ontology_or_default(const std::string& path) {
    return path.empty() ? default_ontology() : load_ontology(path);
}

std::filesystem::path latest_checkpoint(const RunDirectory& dir) {
    return dir.checkpoint_path(dir.initialized() ? dir.completed_rounds() : 0);
}

AnnotationServer* g_server = nullptr;

extern "C" void handle_stop_signal(int) {
    if (g_server) g_server->stop();
}

struct LoopFlags {
    std::string data, run, judge = "fidelity", config, ontology, service_host = "127.0.0.1", stale_policy,
                                     feedback_mode;
    std::optional<double> lambda, lr, temperature, sigma, ridge;
    std::optional<int> rounds, batch, epochs, stop_after, pretrain_epochs;
    std::optional<std::uint64_t> seed;
    int service_port = 8080;
    bool ablation = false;

    void add_to(CLI::App* cmd, bool require_data) {
        auto* d = cmd->add_option("--data", data, "dataset JSONL");
        if (require_data) d->required();
        cmd->add_option("--run", run, "run directory")->required();
        cmd->add_option("--judge", judge, "fidelity | informativeness | human")
            ->check(CLI::IsMember({"fidelity", "informativeness", "human"}));
        cmd->add_option("--config", config, "loop config JSON (flags override it)");
        cmd->add_option("--ontology", ontology, "ontology JSON");
        cmd->add_option("--lambda", lambda, "guide weight of the surrogate penalty");
        cmd->add_option("--rounds", rounds, "number of SLOG rounds");
        cmd->add_option("--batch", batch, "guidance items scored per round");
        cmd->add_option("--epochs", epochs, "fine-tuning epochs per round");
        cmd->add_option("--lr", lr, "fine-tuning learning rate");
        cmd->add_option("--temperature", temperature, "sampling temperature");
        cmd->add_option("--sigma", sigma, "surrogate RBF bandwidth");
        cmd->add_option("--ridge", ridge, "surrogate ridge strength");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--pretrain-epochs", pretrain_epochs, "pretraining epochs when no checkpoint exists");
        cmd->add_option("--stale-policy", stale_policy, "reweight | discard | keep_stale_z");
        cmd->add_option("--feedback-mode", feedback_mode, "accumulate | latest");
        cmd->add_flag("--ablation", ablation, "allow lambda = 0");
    }

    LoopConfig build() const {
        json j = json::object();
        if (!config.empty()) {
            std::ifstream in(config);
            if (!in) throw ConfigError("cannot open loop config " + config);
            try {
                j = json::parse(in);
            } catch (const json::exception& e) {
                throw ConfigError(std::string("invalid loop config: ") + e.what());
            }
        }
        j["judge"] = judge;
        if (lambda) j["guide_weight"] = *lambda;
        if (rounds) j["rounds"] = *rounds;
        if (batch) j["batch_per_round"] = *batch;
        if (epochs) j["epochs_per_round"] = *epochs;
        if (lr) j["learning_rate"] = *lr;
        if (temperature) j["temperature"] = *temperature;
        if (sigma) j["surrogate_sigma"] = *sigma;
        if (ridge) j["surrogate_ridge"] = *ridge;
        if (seed) j["seed"] = *seed;
        if (pretrain_epochs) j["pretrain_epochs"] = *pretrain_epochs;
        if (!stale_policy.empty()) j["stale_policy"] = stale_policy;
        if (!feedback_mode.empty()) j["feedback_mode"] = feedback_mode;
        if (ablation) j["ablation"] = true;
        return LoopConfig::from_json(j);
    }
};

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"SLOG: surrogate-guided fine-tuning of a guidance captioner", "slog"};
    app.require_subcommand(1);

    // gen-data
    std::string gen_config, gen_out;
    std::optional<std::uint64_t> gen_seed;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scan corpus");
    gen->add_option("--config", gen_config, "generator config JSON");
    gen->add_option("--out", gen_out, "output JSONL")->required();
    gen->add_option("--seed", gen_seed, "overrides the config seed");

    // pretrain
    std::string pt_data, pt_out, pt_ontology;
    int pt_epochs = 400, pt_dim = 8;
    double pt_lr = 0.5;
    std::uint64_t pt_seed = 0;
    auto* pre = app.add_subcommand("pretrain", "pretrain the captioner on the train split");
    pre->add_option("--data", pt_data, "dataset JSONL")->required();
    pre->add_option("--out", pt_out, "run directory receiving checkpoints/round_0.json")->required();
    pre->add_option("--epochs", pt_epochs, "full-batch gradient steps");
    pre->add_option("--lr", pt_lr, "learning rate");
    pre->add_option("--embedding-dim", pt_dim, "embedding size m");
    pre->add_option("--seed", pt_seed, "initialisation seed");
    pre->add_option("--ontology", pt_ontology, "ontology JSON");

    // loop
    LoopFlags loop_flags;
    auto* loop = app.add_subcommand("loop", "run SLOG rounds (resumes an existing run directory)");
    loop_flags.add_to(loop, true);
    loop->add_option("--service-host", loop_flags.service_host, "annotation service host (human judge)");
    loop->add_option("--service-port", loop_flags.service_port, "annotation service port (human judge)");
    loop->add_option("--stop-after", loop_flags.stop_after, "stop once this many rounds are complete");

    // bootstrap
    std::string bs_data, bs_run, bs_ontology;
    bool bs_tune = false;
    double bs_sigma = 1.0, bs_ridge = 1e-2, bs_floor = 1e-3;
    int bs_epochs = 400;
    std::uint64_t bs_seed = 0;
    auto* boot = app.add_subcommand("bootstrap", "fit the surrogate to report-derived scores");
    boot->add_option("--data", bs_data, "dataset JSONL")->required();
    boot->add_option("--run", bs_run, "run directory (uses or creates checkpoints/round_0.json)")->required();
    boot->add_option("--sigma", bs_sigma, "RBF bandwidth");
    boot->add_option("--ridge", bs_ridge, "ridge strength");
    boot->add_option("--weight-floor", bs_floor, "lower bound on BLEU weights");
    boot->add_flag("--tune", bs_tune, "select sigma and ridge on the validation split");
    boot->add_option("--pretrain-epochs", bs_epochs, "pretraining epochs when no checkpoint exists");
    boot->add_option("--seed", bs_seed, "pretraining seed when no checkpoint exists");
    boot->add_option("--ontology", bs_ontology, "ontology JSON");

    // eval
    std::string ev_run, ev_split = "test", ev_data;
    std::optional<int> ev_round;
    auto* ev = app.add_subcommand("eval", "evaluate a run's checkpoint on one split");
    ev->add_option("--run", ev_run, "run directory")->required();
    ev->add_option("--split", ev_split, "train | validation | finetune | test");
    ev->add_option("--data", ev_data, "dataset JSONL (defaults to the one recorded in the run)");
    ev->add_option("--round", ev_round, "checkpoint round (defaults to the latest)");

    // series
    std::string se_run;
    auto* se = app.add_subcommand("series", "write per-metric CSV series from metrics.csv");
    se->add_option("--run", se_run, "run directory")->required();

    // serve
    LoopFlags serve_flags;
    serve_flags.judge = "human";
    std::string sv_host = "127.0.0.1";
    int sv_port = 8080;
    auto* serve = app.add_subcommand("serve", "annotation service and loop control over HTTP");
    serve_flags.add_to(serve, false);
    serve->add_option("--port", sv_port, "port (0 picks a free one)");
    serve->add_option("--host", sv_host, "bind address");

    // label
    std::string lb_text, lb_ontology;
    auto* lab = app.add_subcommand("label", "extract finding states from report text");
    lab->add_option("--text", lb_text, "report text")->required();
    lab->add_option("--ontology", lb_ontology, "ontology JSON");

    // bleu
    std::string bl_cand, bl_ref;
    auto* bl = app.add_subcommand("bleu", "sentence BLEU-4");
    bl->add_option("--candidate", bl_cand, "candidate text")->required();
    bl->add_option("--reference", bl_ref, "reference text")->required();

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*gen) {
            GeneratorConfig cfg = gen_config.empty() ? GeneratorConfig{} : load_generator_config(gen_config);
            if (gen_seed) cfg.seed = *gen_seed;
            const auto ds = generate_dataset(cfg);
            save_dataset(ds, gen_out);
            const auto sizes = split_sizes(ds);
            out << "wrote " << ds.scans.size() << " scans to " << gen_out << " (";
            for (auto s : kAllSplits) out << to_string(s) << ' ' << sizes.at(s) << (s == Split::Test ? ")\n" : ", ");
            return kExitOk;
        }
        if (*pre) {
            const auto ontology = ontology_or_default(pt_ontology);
            const auto ds = load_dataset(pt_data);
            if (ds.scans.empty()) throw Error("dataset is empty");
            const auto train = training_examples(ds, Split::Train, ontology);
            const CaptionerDims dims{static_cast<int>(ds.scans.front().x.size()), pt_dim,
                                     static_cast<int>(ontology.size()), kVocabSize};
            const auto params = pretrain(dims, train, {pt_epochs, pt_lr, 0.1, pt_seed});
            RunDirectory dir(pt_out);
            save_checkpoint(params, 0, dir.checkpoint_path(0));
            out << "train nll " << fmt_double(mean_nll(params, train).loss) << "\nwrote "
                << dir.checkpoint_path(0).string() << "\n";
            return kExitOk;
        }
        if (*loop) {
            const auto ontology = ontology_or_default(loop_flags.ontology);
            const auto config = loop_flags.build();
            const auto ds = load_dataset(loop_flags.data);
            std::unique_ptr<HttpSessionClient> client;
            std::unique_ptr<ScoreSource> judge;
            if (config.judge == JudgeSource::Human) {
                client = std::make_unique<HttpSessionClient>(loop_flags.service_host, loop_flags.service_port);
                judge = std::make_unique<HumanJudge>(*client);
            } else {
                judge = std::make_unique<OracleJudge>(config.judge, ontology);
            }
            RunOptions opts;
            opts.data_path = loop_flags.data;
            opts.stop_after_round = loop_flags.stop_after;
            const auto metrics = run_loop(ds, ontology, config, loop_flags.run, *judge, opts);
            out << kMetricsHeader << '\n';
            for (const auto& m : metrics) out << format_metrics_row(m) << '\n';
            return kExitOk;
        }
        if (*boot) {
            const auto ontology = ontology_or_default(bs_ontology);
            const auto ds = load_dataset(bs_data);
            if (ds.scans.empty()) throw Error("dataset is empty");
            RunDirectory dir(bs_run);
            CaptionerParams params;
            if (std::filesystem::exists(dir.checkpoint_path(0))) {
                params = load_checkpoint(dir.checkpoint_path(0), ontology).params;
            } else {
                const CaptionerDims dims{static_cast<int>(ds.scans.front().x.size()), 8,
                                         static_cast<int>(ontology.size()), kVocabSize};
                params = pretrain(dims, training_examples(ds, Split::Train, ontology), {bs_epochs, 0.5, 0.1, bs_seed});
                save_checkpoint(params, 0, dir.checkpoint_path(0));
            }
            BootstrapOptions opts;
            opts.hyper = {bs_sigma, bs_ridge};
            opts.tune = bs_tune;
            opts.weight_floor = bs_floor;
            const auto report = run_bootstrap(ds, params, ontology, opts);
            std::filesystem::create_directories(bs_run);
            std::ofstream(std::filesystem::path(bs_run) / "bootstrap.json") << report.to_json().dump(2) << '\n';
            std::ofstream curve(std::filesystem::path(bs_run) / "bootstrap_curve.csv");
            curve << "n_train,train_rmse,validation_rmse\n";
            for (const auto& p : report.curve)
                curve << p.n_train << ',' << fmt_double(p.train_rmse) << ',' << fmt_double(p.validation_rmse) << '\n';
            out << "sigma " << fmt_double(report.hyper.sigma) << " ridge " << fmt_double(report.hyper.ridge) << '\n'
                << "test rmse " << fmt_double(report.test_rmse) << '\n'
                << "test score std " << fmt_double(report.test_score_std) << '\n'
                << "ratio " << fmt_double(report.ratio()) << '\n';
            return kExitOk;
        }
        if (*ev) {
            RunDirectory dir(ev_run);
            const auto frozen = dir.read_config();
            const auto config = LoopConfig::from_json(frozen.at("loop"));
            std::string data_path = ev_data.empty() ? frozen.value("data_path", std::string()) : ev_data;
            if (data_path.empty()) throw ConfigError("no dataset recorded in the run; pass --data");
            const auto ds = load_dataset(data_path);
            const auto& ontology = default_ontology();
            const auto cp = load_checkpoint(ev_round ? dir.checkpoint_path(*ev_round) : latest_checkpoint(dir), ontology);

            std::optional<Surrogate> surrogate;
            const auto feedback = dir.read_feedback();
            std::vector<const FeedbackRecord*> usable;
            for (const auto& r : feedback)
                if (r.round_created <= cp.round) usable.push_back(&r);
            if (!usable.empty()) {
                const Eigen::Index n = static_cast<Eigen::Index>(usable.size());
                Eigen::MatrixXd z(n, cp.params.dims.m);
                Eigen::VectorXd q(n), w(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const auto now = generate(cp.params, ds.by_id(usable[i]->scan_id).x, ontology);
                    z.row(i) = now.z.transpose();
                    q(i) = usable[i]->q;
                    w(i) = usable[i]->round_created == cp.round ? 1.0 : bleu4(usable[i]->guidance.text, now.text);
                }
                surrogate = Surrogate::fit(z, q, w, config.surrogate);
            }
            const OracleJudge judge(
                config.judge == JudgeSource::Human ? JudgeSource::OracleFidelity : config.judge, ontology);
            const auto r = evaluate(cp.params, surrogate ? &*surrogate : nullptr, ds, parse_split(ev_split), judge,
                                    ontology);
            json j = {{"round", cp.round},
                      {"split", ev_split},
                      {"count", r.count},
                      {"mean_judge_score", r.mean_judge_score},
                      {"decision_accuracy", r.decision_accuracy},
                      {"mean_nll", r.mean_nll},
                      {"surrogate_rmse", r.surrogate_rmse ? json(*r.surrogate_rmse) : json(nullptr)},
                      {"mean_surrogate_score", r.mean_surrogate_score ? json(*r.mean_surrogate_score) : json(nullptr)}};
            out << j.dump(2) << '\n';
            return kExitOk;
        }
        if (*se) {
            for (const auto& p : emit_series(se_run)) out << p.string() << '\n';
            return kExitOk;
        }
        if (*serve) {
            SessionStore store(serve_flags.run);
            RunDirectory dir(serve_flags.run);
            std::unique_ptr<LoopController> controller;
            if (dir.initialized() || !serve_flags.data.empty()) {
                const auto ontology = ontology_or_default(serve_flags.ontology);
                LoopConfig config;
                std::string data_path = serve_flags.data;
                if (dir.initialized()) {
                    const auto frozen = dir.read_config();
                    config = LoopConfig::from_json(frozen.at("loop"));
                    if (data_path.empty()) data_path = frozen.value("data_path", std::string());
                } else {
                    config = serve_flags.build();
                }
                if (data_path.empty()) throw ConfigError("no dataset recorded in the run; pass --data");
                auto ds = load_dataset(data_path);
                if (!dir.initialized()) {
                    RunLock lock(serve_flags.run);
                    RunOptions opts;
                    opts.data_path = data_path;
                    (void)open_run(dir, ds, ontology, config, opts);
                }
                controller = std::make_unique<LoopController>(serve_flags.run, std::move(ds), ontology, config, store);
            }
            AnnotationServer server(store, controller.get());
            const int port = server.bind(sv_host, sv_port);
            g_server = &server;
            std::signal(SIGINT, handle_stop_signal);
            std::signal(SIGTERM, handle_stop_signal);
            err << "listening on " << sv_host << ':' << port << std::endl;
            server.serve();
            g_server = nullptr;
            return kExitOk;
        }
        if (*lab) {
            const auto ontology = ontology_or_default(lb_ontology);
            const auto r = label_text(lb_text, ontology);
            for (std::size_t k = 0; k < ontology.size(); ++k)
                out << ontology.labels[k] << '\t' << value_of(r.states[k]) << '\n';
            out << "score\t" << fmt_double(info_score(r.states)) << '\n';
            return kExitOk;
        }
        if (*bl) {
            out << fmt_double(bleu4(bl_cand, bl_ref)) << '\n';
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace slog

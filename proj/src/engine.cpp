#include "slog/engine.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "slog/errors.hpp"
#include "slog/eval_harness.hpp"
#include "slog/report_labeler.hpp"
#include "slog/rng.hpp"
#include "slog/text_metrics.hpp"

#include "file_util.hpp"

namespace slog {

using nlohmann::json;

namespace {

std::string_view to_string(StalePolicy p) {
    switch (p) {
        case StalePolicy::Reweight: return "reweight";
        case StalePolicy::Discard: return "discard";
        case StalePolicy::KeepStaleZ: return "keep_stale_z";
    }
    return "reweight";
}

StalePolicy parse_stale_policy(std::string_view s) {
    if (s == "reweight") return StalePolicy::Reweight;
    if (s == "discard") return StalePolicy::Discard;
    if (s == "keep_stale_z") return StalePolicy::KeepStaleZ;
    throw ConfigError("unknown stale_policy '" + std::string(s) + "'");
}

std::string_view to_string(FeedbackMode m) { return m == FeedbackMode::Accumulate ? "accumulate" : "latest"; }

FeedbackMode parse_feedback_mode(std::string_view s) {
    if (s == "accumulate") return FeedbackMode::Accumulate;
    if (s == "latest") return FeedbackMode::Latest;
    throw ConfigError("unknown feedback_mode '" + std::string(s) + "'");
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void append_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    detail::durable_append_lines(path, lines);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) { return detail::read_complete_lines(path); }

}  // namespace

// --- config ---------------------------------------------------------------------------

void LoopConfig::validate() const {
    if (!std::isfinite(guide_weight) || guide_weight < 0) throw ConfigError("guide weight (lambda) must be >= 0");
    if (guide_weight == 0 && !ablation) throw ConfigError("lambda must be > 0 (lambda = 0 requires ablation mode)");
    if (rounds < 0) throw ConfigError("rounds must be >= 0");
    if (batch_per_round < 1) throw ConfigError("batch_per_round must be >= 1");
    if (epochs_per_round < 1) throw ConfigError("epochs_per_round must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be > 0");
    if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
    if (!(surrogate.sigma > 0) || !(surrogate.ridge > 0)) throw ConfigError("surrogate sigma and ridge must be > 0");
    if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
    if (pretrain_epochs < 0 || !(pretrain_learning_rate > 0)) throw ConfigError("invalid pretraining settings");
}

json LoopConfig::to_json() const {
    return json{{"guide_weight", guide_weight},
                {"rounds", rounds},
                {"batch_per_round", batch_per_round},
                {"epochs_per_round", epochs_per_round},
                {"learning_rate", learning_rate},
                {"temperature", temperature},
                {"surrogate_sigma", surrogate.sigma},
                {"surrogate_ridge", surrogate.ridge},
                {"judge", std::string(slog::to_string(judge))},
                {"stale_policy", std::string(to_string(stale_policy))},
                {"feedback_mode", std::string(to_string(feedback_mode))},
                {"seed", seed},
                {"ablation", ablation},
                {"embedding_dim", embedding_dim},
                {"pretrain_epochs", pretrain_epochs},
                {"pretrain_learning_rate", pretrain_learning_rate}};
}

LoopConfig LoopConfig::from_json(const json& j) {
    LoopConfig c;
    try {
        c.guide_weight = j.value("guide_weight", c.guide_weight);
        c.rounds = j.value("rounds", c.rounds);
        c.batch_per_round = j.value("batch_per_round", c.batch_per_round);
        c.epochs_per_round = j.value("epochs_per_round", c.epochs_per_round);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.temperature = j.value("temperature", c.temperature);
        c.surrogate.sigma = j.value("surrogate_sigma", c.surrogate.sigma);
        c.surrogate.ridge = j.value("surrogate_ridge", c.surrogate.ridge);
        if (j.contains("judge")) c.judge = parse_judge(j.at("judge").get<std::string>());
        if (j.contains("stale_policy")) c.stale_policy = parse_stale_policy(j.at("stale_policy").get<std::string>());
        if (j.contains("feedback_mode")) c.feedback_mode = parse_feedback_mode(j.at("feedback_mode").get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.ablation = j.value("ablation", c.ablation);
        c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
        c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
        c.pretrain_learning_rate = j.value("pretrain_learning_rate", c.pretrain_learning_rate);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid loop config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string loop_config_hash(const LoopConfig& config, const std::string& dataset_fingerprint) {
    json j = config.to_json();
    j.erase("rounds");
    return fnv1a_hex(j.dump() + "|" + dataset_fingerprint);
}

bool RoundMetrics::all_finite() const {
    return std::isfinite(nll_validation) && std::isfinite(surrogate_rmse_validation) &&
           std::isfinite(mean_judge_score_heldout) && std::isfinite(decision_accuracy_heldout) &&
           std::isfinite(mean_surrogate_score_finetune);
}

std::string format_metrics_row(const RoundMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g", m.round, m.nll_validation,
                  m.surrogate_rmse_validation, m.mean_judge_score_heldout, m.decision_accuracy_heldout,
                  m.mean_surrogate_score_finetune);
    return buf;
}

// --- loss -----------------------------------------------------------------------------

LossAndGrad augmented_loss(const CaptionerParams& params, std::span<const TrainExample> batch,
                           std::span<const Eigen::VectorXd> feedback_x, const Surrogate& surrogate, double lambda) {
    if (!std::isfinite(lambda) || lambda < 0) throw ConfigError("lambda must be finite and non-negative");
    LossAndGrad out = mean_nll(params, batch);
    if (lambda == 0) return out;
    if (feedback_x.empty()) throw ConfigError("penalty term undefined: empty feedback set with lambda > 0");
    require(surrogate.dim() == params.dims.m, "surrogate dimension must equal embedding size");

    const double scale = lambda / static_cast<double>(feedback_x.size());
    double penalty = 0;
    for (const auto& x : feedback_x) {
        const Eigen::VectorXd z = encode(params, x);
        penalty -= surrogate.predict(z);
        const Eigen::VectorXd dz = -scale * surrogate.predict_grad(z);
        backprop_encoder(params, x, z, dz, out.grad);
    }
    out.loss += scale * penalty;
    return out;
}

CaptionerParams fine_tune(CaptionerParams params, std::span<const TrainExample> batch,
                          std::span<const Eigen::VectorXd> feedback_x, const Surrogate& surrogate, double lambda,
                          double learning_rate, int epochs) {
    for (int e = 0; e < epochs; ++e) {
        const auto step = augmented_loss(params, batch, feedback_x, surrogate, lambda);
        params.axpy(-learning_rate, step.grad);
    }
    return params;
}

// --- rounds ---------------------------------------------------------------------------

std::vector<const Scan*> round_batch(const Dataset& dataset, int round_index, int batch_size, std::uint64_t seed) {
    const auto pool = dataset.in_split(Split::Finetune);
    if (pool.empty()) throw Error("dataset has no finetune split to draw feedback batches from");
    const std::size_t n = pool.size();
    std::vector<const Scan*> out;
    out.reserve(batch_size);
    std::size_t current_pass = static_cast<std::size_t>(-1);
    std::vector<std::size_t> perm(n);
    const std::size_t start = static_cast<std::size_t>(round_index) * static_cast<std::size_t>(batch_size);
    for (std::size_t pos = start; pos < start + static_cast<std::size_t>(batch_size); ++pos) {
        const std::size_t pass = pos / n;
        if (pass != current_pass) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            Rng rng(derive_seed(seed, {0xba7c, pass}));
            std::shuffle(perm.begin(), perm.end(), rng);
            current_pass = pass;
        }
        out.push_back(pool[perm[pos % n]]);
    }
    return out;
}

RoundResult run_round(const LoopState& state, const Dataset& dataset, const FindingOntology& ontology,
                      const LoopConfig& config, ScoreSource& judge) {
    config.validate();
    const int round = state.round + 1;
    const CaptionerParams& params = state.params;

    // (1)-(2) sample a batch and generate guidance
    const auto batch = round_batch(dataset, state.round, config.batch_per_round, config.seed);
    std::vector<ScanGuidance> items;
    std::vector<Guidance> guidances;
    items.reserve(batch.size());
    guidances.reserve(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
        Sampling sampling{config.temperature,
                          derive_seed(config.seed, {0x5a3d, static_cast<std::uint64_t>(round), j})};
        guidances.push_back(generate(params, batch[j]->x, ontology, sampling));
        items.push_back({batch[j], guidances.back().text});
    }

    // (3) scores
    auto judgments = judge.score(items, round);
    if (judgments.size() != batch.size()) throw Error("judge returned a different number of scores than requested");

    // (4) fresh feedback
    std::vector<FeedbackRecord> fresh;
    fresh.reserve(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j)
        fresh.push_back({batch[j]->id, guidances[j], std::clamp(judgments[j].q, -1.0, 1.0), round, 1.0,
                         judgments[j].source});

    // (5) refresh stale feedback
    std::vector<FeedbackRecord> feedback;
    std::vector<Eigen::VectorXd> current_z;
    std::vector<Eigen::VectorXd> feedback_x;
    if (config.feedback_mode == FeedbackMode::Accumulate) {
        for (const auto& rec : state.feedback) {
            if (config.stale_policy == StalePolicy::Discard) continue;
            const Scan& scan = dataset.by_id(rec.scan_id);
            FeedbackRecord updated = rec;
            if (config.stale_policy == StalePolicy::Reweight) {
                const Guidance now = generate(params, scan.x, ontology);
                updated.weight = bleu4(rec.guidance.text, now.text);
                current_z.push_back(now.z);
            } else {
                updated.weight = 1.0;
                current_z.push_back(rec.guidance.z);
            }
            feedback_x.push_back(scan.x);
            feedback.push_back(std::move(updated));
        }
    }
    for (std::size_t j = 0; j < fresh.size(); ++j) {
        current_z.push_back(fresh[j].guidance.z);
        feedback_x.push_back(batch[j]->x);
        feedback.push_back(fresh[j]);
    }

    // (6) fit the surrogate anew
    const Eigen::Index n = static_cast<Eigen::Index>(feedback.size());
    Eigen::MatrixXd z_mat(n, params.dims.m);
    Eigen::VectorXd q(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        z_mat.row(i) = current_z[i].transpose();
        q(i) = feedback[i].q;
        w(i) = feedback[i].weight;
    }
    Surrogate surrogate = Surrogate::fit(z_mat, q, w, config.surrogate);

    // (7) fine-tune against the frozen surrogate
    const auto train = training_examples(dataset, Split::Train, ontology);
    CaptionerParams tuned = fine_tune(params, train, feedback_x, surrogate, config.guide_weight,
                                      config.learning_rate, config.epochs_per_round);
    if (!tuned.all_finite()) throw Error("fine-tuning diverged (non-finite parameters)");

    // (8) metrics
    const OracleJudge eval_judge(config.judge == JudgeSource::Human ? JudgeSource::OracleFidelity : config.judge,
                                 ontology);
    const auto val = evaluate(tuned, &surrogate, dataset, Split::Validation, eval_judge, ontology);
    const auto test = evaluate(tuned, nullptr, dataset, Split::Test, eval_judge, ontology);
    const auto fin = evaluate(tuned, &surrogate, dataset, Split::Finetune, eval_judge, ontology);
    RoundMetrics metrics{round,
                         val.mean_nll,
                         *val.surrogate_rmse,
                         test.mean_judge_score,
                         test.decision_accuracy,
                         *fin.mean_surrogate_score};

    return RoundResult{LoopState{std::move(tuned), std::move(feedback), round}, metrics, std::move(surrogate),
                       std::move(fresh), std::move(judgments)};
}

// --- run directory --------------------------------------------------------------------

RunLock::RunLock(const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir);
    const auto path = run_dir / "lock";
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + path.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw Conflict("run directory " + run_dir.string() + " is locked by another loop");
    }
}

RunLock::~RunLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

RunDirectory::RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path RunDirectory::checkpoint_path(int round) const {
    return root_ / "checkpoints" / ("round_" + std::to_string(round) + ".json");
}

bool RunDirectory::initialized() const { return std::filesystem::exists(root_ / "config.json"); }

void RunDirectory::initialize(const json& frozen_config) {
    std::filesystem::create_directories(root_ / "checkpoints");
    {
        std::ofstream out(root_ / "metrics.csv", std::ios::binary | std::ios::trunc);
        out << kMetricsHeader << '\n';
    }
    for (const char* name : {"feedback.jsonl", "annotations.jsonl"})
        if (!std::filesystem::exists(root_ / name)) std::ofstream(root_ / name, std::ios::binary);
    const auto tmp = root_ / "config.json.tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << frozen_config.dump(2) << '\n';
        if (!out) throw Error("cannot write run config");
    }
    std::filesystem::rename(tmp, root_ / "config.json");
}

json RunDirectory::read_config() const {
    std::ifstream in(root_ / "config.json");
    if (!in) throw Error("run directory " + root_.string() + " has no config.json");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config.json: ") + e.what(), 0);
    }
}

std::vector<RoundMetrics> RunDirectory::read_metrics() const {
    const auto lines = read_lines(root_ / "metrics.csv");
    std::vector<RoundMetrics> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        RoundMetrics m;
        if (std::sscanf(lines[i].c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &m.round, &m.nll_validation,
                        &m.surrogate_rmse_validation, &m.mean_judge_score_heldout, &m.decision_accuracy_heldout,
                        &m.mean_surrogate_score_finetune) != 6)
            throw ParseError("malformed metrics row", i + 1);
        out.push_back(m);
    }
    return out;
}

int RunDirectory::completed_rounds() const { return static_cast<int>(read_metrics().size()); }

void RunDirectory::append_metrics(const RoundMetrics& m) const {
    append_lines(root_ / "metrics.csv", {format_metrics_row(m)});
}

void RunDirectory::discard_uncommitted() const {
    detail::truncate_torn_tail(root_ / "metrics.csv");
    detail::truncate_torn_tail(root_ / "feedback.jsonl");
    const int completed = completed_rounds();
    const auto lines = read_lines(root_ / "feedback.jsonl");
    std::vector<std::string> keep;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        int round = 0;
        try {
            round = json::parse(lines[i]).at("round_created").get<int>();
        } catch (const json::exception&) {
            throw ParseError("feedback.jsonl: unreadable record", i + 1);
        }
        if (round <= completed) keep.push_back(lines[i]);
    }
    if (keep.size() == lines.size()) return;
    const auto tmp = root_ / "feedback.jsonl.tmp";
    std::filesystem::remove(tmp);
    append_lines(tmp, keep);
    if (keep.empty()) std::ofstream(tmp, std::ios::binary | std::ios::trunc);
    std::filesystem::rename(tmp, root_ / "feedback.jsonl");
}

std::vector<FeedbackRecord> RunDirectory::read_feedback() const {
    std::vector<FeedbackRecord> out;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(root_ / "feedback.jsonl")) {
        ++lineno;
        try {
            auto j = json::parse(line);
            FeedbackRecord r;
            r.scan_id = j.at("scan_id").get<std::string>();
            r.guidance.tokens = j.at("tokens").get<std::vector<int>>();
            r.guidance.text = j.at("text").get<std::string>();
            r.guidance.z = vec_from(j.at("z"));
            r.q = j.at("q").get<double>();
            r.round_created = j.at("round_created").get<int>();
            r.weight = j.at("weight").get<double>();
            r.source = parse_judge(j.at("source").get<std::string>());
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw ParseError(std::string("feedback.jsonl: ") + e.what(), lineno);
        }
    }
    return out;
}

void RunDirectory::append_feedback(std::span<const FeedbackRecord> records) const {
    std::vector<std::string> lines;
    for (const auto& r : records)
        lines.push_back(json{{"scan_id", r.scan_id},
                             {"tokens", r.guidance.tokens},
                             {"text", r.guidance.text},
                             {"z", vec_json(r.guidance.z)},
                             {"q", r.q},
                             {"round_created", r.round_created},
                             {"weight", r.weight},
                             {"source", std::string(to_string(r.source))}}
                            .dump());
    append_lines(root_ / "feedback.jsonl", lines);
}

void RunDirectory::append_annotations(std::span<const Judgment> judgments, int round) const {
    std::vector<std::string> lines;
    for (const auto& j : judgments) {
        if (j.source == JudgeSource::Human) continue;  // the annotation service logs these itself
        lines.push_back(json{{"scan_id", j.scan_id},
                             {"guidance_text", j.guidance_text},
                             {"score", j.q},
                             {"source", std::string(to_string(j.source))},
                             {"round", round}}
                            .dump());
    }
    // A round re-run after a crash regenerates lines that may already be on disk.
    const auto existing = read_lines(root_ / "annotations.jsonl");
    const std::set<std::string> seen(existing.begin(), existing.end());
    std::erase_if(lines, [&](const std::string& l) { return seen.count(l) > 0; });
    append_lines(root_ / "annotations.jsonl", lines);
}

// --- loop -----------------------------------------------------------------------------

LoopState open_run(RunDirectory& dir, const Dataset& dataset, const FindingOntology& ontology,
                   const LoopConfig& config, const RunOptions& options) {
    config.validate();
    const std::string hash = loop_config_hash(config, dataset.config_hash);
    if (dir.initialized()) {
        const auto frozen = dir.read_config();
        if (frozen.value("config_hash", std::string()) != hash)
            throw ConfigError("run directory " + dir.root().string() +
                              " was created with a different configuration (config hash mismatch)");
        dir.discard_uncommitted();
    } else {
        if (!std::filesystem::exists(dir.checkpoint_path(0))) {
            if (dataset.scans.empty()) throw Error("cannot pretrain on an empty dataset");
            const CaptionerDims dims{static_cast<int>(dataset.scans.front().x.size()), config.embedding_dim,
                                     static_cast<int>(ontology.size()), kVocabSize};
            const auto train = training_examples(dataset, Split::Train, ontology);
            const auto params =
                pretrain(dims, train, {config.pretrain_epochs, config.pretrain_learning_rate, 0.1, config.seed});
            save_checkpoint(params, 0, dir.checkpoint_path(0));
        }
        json frozen = {{"loop", config.to_json()},
                       {"dataset_fingerprint", dataset.config_hash},
                       {"config_hash", hash}};
        if (options.data_path) frozen["data_path"] = std::filesystem::absolute(*options.data_path).string();
        dir.initialize(frozen);
    }

    LoopState state{CaptionerParams::zeros({}), {}, dir.completed_rounds()};
    auto cp = load_checkpoint(dir.checkpoint_path(state.round), ontology);
    if (!dataset.scans.empty() && cp.params.dims.d != dataset.scans.front().x.size())
        throw ConfigError("checkpoint feature size does not match the dataset");
    state.params = std::move(cp.params);
    for (auto& rec : dir.read_feedback()) {
        if (config.feedback_mode == FeedbackMode::Latest && rec.round_created != state.round) continue;
        state.feedback.push_back(std::move(rec));
    }
    return state;
}

void commit_round(const RunDirectory& dir, const RoundResult& result) {
    const int round = result.state.round;
    save_checkpoint(result.state.params, round, dir.checkpoint_path(round));
    dir.append_feedback(result.new_records);
    dir.append_annotations(result.judgments, round);
    dir.append_metrics(result.metrics);
}

std::vector<RoundMetrics> run_loop(const Dataset& dataset, const FindingOntology& ontology, const LoopConfig& config,
                                   const std::filesystem::path& run_dir, ScoreSource& judge,
                                   const RunOptions& options) {
    RunLock lock(run_dir);
    RunDirectory dir(run_dir);
    // Without a live annotation service this process is the only writer of the log.
    if (std::filesystem::exists(run_dir / "annotations.jsonl")) detail::truncate_torn_tail(run_dir / "annotations.jsonl");
    LoopState state = open_run(dir, dataset, ontology, config, options);
    auto metrics = dir.read_metrics();
    while (state.round < config.rounds) {
        if (options.stop_after_round && state.round >= *options.stop_after_round) break;
        auto result = run_round(state, dataset, ontology, config, judge);
        commit_round(dir, result);
        metrics.push_back(result.metrics);
        state = std::move(result.state);
    }
    return metrics;
}

// --- bootstrap ------------------------------------------------------------------------

json BootstrapReport::to_json() const {
    json curve_j = json::array();
    for (const auto& p : curve)
        curve_j.push_back({{"n_train", p.n_train}, {"train_rmse", p.train_rmse}, {"validation_rmse", p.validation_rmse}});
    return json{{"sigma", hyper.sigma},
                {"ridge", hyper.ridge},
                {"curve", curve_j},
                {"test_rmse", test_rmse},
                {"test_score_std", test_score_std},
                {"rmse_to_std_ratio", ratio()},
                {"mean_train_weight", mean_train_weight},
                {"n_train", n_train},
                {"n_validation", n_validation},
                {"n_test", n_test}};
}

namespace {

struct ScoredSplit {
    Eigen::MatrixXd z;
    Eigen::VectorXd q;
    Eigen::VectorXd w;
};

ScoredSplit score_split(const Dataset& dataset, Split split, const CaptionerParams& params,
                        const FindingOntology& ontology, double weight_floor) {
    const auto scans = dataset.in_split(split);
    const Eigen::Index n = static_cast<Eigen::Index>(scans.size());
    ScoredSplit s{Eigen::MatrixXd(n, params.dims.m), Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const Guidance g = generate(params, scans[i]->x, ontology);
        s.z.row(i) = g.z.transpose();
        s.q(i) = info_score(label_text(scans[i]->report, ontology).states);
        s.w(i) = std::max(bleu4(g.text, scans[i]->report), weight_floor);
    }
    return s;
}

}  // namespace

BootstrapReport run_bootstrap(const Dataset& dataset, const CaptionerParams& params, const FindingOntology& ontology,
                              const BootstrapOptions& options) {
    if (options.weight_floor < 0 || options.weight_floor > 1) throw ConfigError("weight_floor must be in [0,1]");
    const auto train = score_split(dataset, Split::Train, params, ontology, options.weight_floor);
    const auto val = score_split(dataset, Split::Validation, params, ontology, options.weight_floor);
    const auto test = score_split(dataset, Split::Test, params, ontology, options.weight_floor);
    if (train.q.size() == 0 || val.q.size() == 0 || test.q.size() == 0)
        throw Error("bootstrap needs non-empty train, validation and test splits");

    BootstrapReport report;
    report.n_train = static_cast<std::size_t>(train.q.size());
    report.n_validation = static_cast<std::size_t>(val.q.size());
    report.n_test = static_cast<std::size_t>(test.q.size());
    report.mean_train_weight = train.w.mean();
    report.hyper = options.tune ? select_hyperparameters(train.z, train.q, train.w, val.z, val.q).best : options.hyper;

    std::vector<int> sizes;
    for (int n : options.curve_sizes)
        if (n > 0 && n < train.q.size()) sizes.push_back(n);
    sizes.push_back(static_cast<int>(train.q.size()));
    std::optional<Surrogate> full;
    for (int n : sizes) {
        auto s = Surrogate::fit(train.z.topRows(n), train.q.head(n), train.w.head(n), report.hyper);
        report.curve.push_back({n, rmse(s, train.z.topRows(n), train.q.head(n)), rmse(s, val.z, val.q)});
        if (n == static_cast<int>(train.q.size())) full.emplace(std::move(s));
    }
    report.test_rmse = rmse(*full, test.z, test.q);
    report.test_score_std = std::sqrt((test.q.array() - test.q.mean()).square().mean());
    return report;
}

}  // namespace slog

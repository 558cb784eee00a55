#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "slog/captioner.hpp"
#include "slog/core_data.hpp"
#include "slog/judges.hpp"
#include "slog/surrogate.hpp"

namespace slog {

// What happens to feedback scored under earlier parameters.
enum class StalePolicy {
    Reweight,    // re-embed under current params, weight by BLEU-4 against the current caption
    Discard,     // drop it
    KeepStaleZ,  // keep the recorded embedding and weight 1
};

enum class FeedbackMode { Accumulate, Latest };

struct LoopConfig {
    double guide_weight = 1.0;  // lambda
    int rounds = 5;
    int batch_per_round = 32;
    int epochs_per_round = 3;
    double learning_rate = 0.05;
    double temperature = 1.0;
    SurrogateHyper surrogate;
    JudgeSource judge = JudgeSource::OracleFidelity;
    StalePolicy stale_policy = StalePolicy::Reweight;
    FeedbackMode feedback_mode = FeedbackMode::Accumulate;
    std::uint64_t seed = 0;
    bool ablation = false;  // permits guide_weight == 0
    // Used only when the run directory has no round-0 checkpoint.
    int embedding_dim = 8;
    int pretrain_epochs = 400;
    double pretrain_learning_rate = 0.5;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static LoopConfig from_json(const nlohmann::json& j);
};

struct FeedbackRecord {
    std::string scan_id;
    Guidance guidance;  // as generated and scored
    double q = 0;
    int round_created = 0;
    double weight = 1.0;
    JudgeSource source = JudgeSource::OracleFidelity;
};

struct RoundMetrics {
    int round = 0;
    double nll_validation = 0;
    double surrogate_rmse_validation = 0;
    double mean_judge_score_heldout = 0;
    double decision_accuracy_heldout = 0;
    double mean_surrogate_score_finetune = 0;

    [[nodiscard]] bool all_finite() const;
};

struct LoopState {
    CaptionerParams params;
    std::vector<FeedbackRecord> feedback;
    int round = 0;  // completed rounds
};

/// L(g, D) + lambda * E_F[-s(encode(x))].
///
/// The NLL term is the mean over `batch` and the penalty the mean over `feedback_x`.
/// The surrogate is read-only; its gradient only flows back into the encoder.
/// Throws ConfigError when lambda > 0 and feedback_x is empty.
LossAndGrad augmented_loss(const CaptionerParams& params, std::span<const TrainExample> batch,
                           std::span<const Eigen::VectorXd> feedback_x, const Surrogate& surrogate, double lambda);

// `epochs` full-batch gradient-descent steps on augmented_loss.
CaptionerParams fine_tune(CaptionerParams params, std::span<const TrainExample> batch,
                          std::span<const Eigen::VectorXd> feedback_x, const Surrogate& surrogate, double lambda,
                          double learning_rate, int epochs);

// Finetune-split scans for round `round_index` (0-based): consecutive windows over a
// sequence of seeded permutations, reshuffled each time the split is exhausted.
std::vector<const Scan*> round_batch(const Dataset& dataset, int round_index, int batch_size, std::uint64_t seed);

struct RoundResult {
    LoopState state;
    RoundMetrics metrics;
    Surrogate surrogate;
    std::vector<FeedbackRecord> new_records;
    std::vector<Judgment> judgments;
};

/// One SLOG iteration: sample, generate, score, refresh stale feedback, fit the
/// surrogate anew, fine-tune, evaluate. `state` is never modified; on any error
/// (surrogate fit failure included) the exception propagates and nothing changes.
RoundResult run_round(const LoopState& state, const Dataset& dataset, const FindingOntology& ontology,
                      const LoopConfig& config, ScoreSource& judge);

/// Exclusive advisory lock on <run_dir>/lock. Throws Conflict when already held.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    int fd_ = -1;
};

/// On-disk layout of a loop run.
///
///   config.json               frozen loop config, dataset fingerprint and config hash
///   checkpoints/round_{r}.json
///   metrics.csv               one row per completed round; the last step of a round commit
///   feedback.jsonl            scored guidance with embeddings
///   annotations.jsonl         one line per judgment
class RunDirectory {
public:
    explicit RunDirectory(std::filesystem::path root);

    [[nodiscard]] const std::filesystem::path& root() const noexcept { return root_; }
    [[nodiscard]] std::filesystem::path checkpoint_path(int round) const;
    [[nodiscard]] bool initialized() const;

    void initialize(const nlohmann::json& frozen_config);
    [[nodiscard]] nlohmann::json read_config() const;

    [[nodiscard]] int completed_rounds() const;
    [[nodiscard]] std::vector<RoundMetrics> read_metrics() const;
    void append_metrics(const RoundMetrics& m) const;

    // Crash recovery: trims half-written lines from metrics.csv and feedback.jsonl and
    // drops feedback recorded by a round whose metrics row never landed.
    void discard_uncommitted() const;

    [[nodiscard]] std::vector<FeedbackRecord> read_feedback() const;
    void append_feedback(std::span<const FeedbackRecord> records) const;
    void append_annotations(std::span<const Judgment> judgments, int round) const;

private:
    std::filesystem::path root_;
};

inline constexpr const char* kMetricsHeader =
    "round,nll_validation,surrogate_rmse_validation,mean_judge_score_heldout,decision_accuracy_heldout,"
    "mean_surrogate_score_finetune";

std::string format_metrics_row(const RoundMetrics& m);

// Hash of the loop config (excluding the round count) and the dataset fingerprint.
std::string loop_config_hash(const LoopConfig& config, const std::string& dataset_fingerprint);

struct RunOptions {
    std::optional<std::filesystem::path> data_path;  // recorded in config.json
    std::optional<int> stop_after_round;             // simulate an interruption
};

// Creates or validates the run directory and returns the state after its last completed
// round, pretraining a round-0 checkpoint when none exists.
LoopState open_run(RunDirectory& dir, const Dataset& dataset, const FindingOntology& ontology,
                   const LoopConfig& config, const RunOptions& options = {});

// Persists a finished round (checkpoint, feedback, annotations, then metrics).
void commit_round(const RunDirectory& dir, const RoundResult& result);

/// Executes rounds until config.rounds, resuming after the last completed one.
/// Throws ConfigError when an existing run directory was created with a different config.
std::vector<RoundMetrics> run_loop(const Dataset& dataset, const FindingOntology& ontology, const LoopConfig& config,
                                   const std::filesystem::path& run_dir, ScoreSource& judge,
                                   const RunOptions& options = {});

struct BootstrapOptions {
    SurrogateHyper hyper;
    bool tune = false;  // pick (sigma, ridge) on the validation split
    // Lower bound on BLEU weights so that an all-zero weight vector cannot occur.
    double weight_floor = 1e-3;
    std::vector<int> curve_sizes{25, 50, 100, 200, 400};
};

struct CurvePoint {
    int n_train = 0;
    double train_rmse = 0;
    double validation_rmse = 0;
};

struct BootstrapReport {
    SurrogateHyper hyper;
    std::vector<CurvePoint> curve;  // last point uses the full training split
    double test_rmse = 0;
    double test_score_std = 0;
    double mean_train_weight = 0;
    std::size_t n_train = 0, n_validation = 0, n_test = 0;

    [[nodiscard]] double ratio() const { return test_score_std > 0 ? test_rmse / test_score_std : 0.0; }
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Fits the surrogate to report-derived information scores instead of live feedback:
/// z from the current encoder, q = info_score(label_text(report)), and each training
/// example weighted by BLEU-4 of its generated caption against the report.
BootstrapReport run_bootstrap(const Dataset& dataset, const CaptionerParams& params, const FindingOntology& ontology,
                              const BootstrapOptions& options = {});

}  // namespace slog

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "slog/captioner.hpp"
#include "slog/core_data.hpp"
#include "slog/judges.hpp"
#include "slog/surrogate.hpp"

namespace slog {

struct EvalResult {
    std::size_t count = 0;
    double mean_judge_score = 0;
    double decision_accuracy = 0;
    double mean_nll = 0;                           // against pretraining targets
    std::optional<double> surrogate_rmse;          // surrogate vs judge scores of the same guidance
    std::optional<double> mean_surrogate_score;    // mean s(encode(x))
};

/// Scores argmax guidance for every scan in `split`. Read-only.
/// Throws Error when the split is empty.
EvalResult evaluate(const CaptionerParams& params, const Surrogate* surrogate, const Dataset& dataset, Split split,
                    const OracleJudge& judge, const FindingOntology& ontology);

inline const std::vector<std::string> kMetricColumns{"nll_validation", "surrogate_rmse_validation",
                                                     "mean_judge_score_heldout", "decision_accuracy_heldout",
                                                     "mean_surrogate_score_finetune"};

// Writes <run_dir>/series/<metric>.csv with columns round,value. Returns the files written.
std::vector<std::filesystem::path> emit_series(const std::filesystem::path& run_dir);

}  // namespace slog

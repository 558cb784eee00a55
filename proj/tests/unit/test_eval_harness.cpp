#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "slog/captioner.hpp"
#include "slog/errors.hpp"
#include "slog/eval_harness.hpp"

using namespace slog;
namespace fs = std::filesystem;

namespace {

// Decoder that reads the truth straight out of x: x_k = +1 present, -1 absent, 0 ambiguous.
CaptionerParams truth_revealing_captioner() {
    const CaptionerDims dims{8, 8, 8, 4};
    auto p = CaptionerParams::zeros(dims);
    p.encoder_weight = 3.0 * Eigen::MatrixXd::Identity(8, 8);
    for (int k = 0; k < 8; ++k) {
        p.slot_weights[k](kPresent, k) = 10.0;
        p.slot_weights[k](kAbsent, k) = -10.0;
        p.slot_biases[k](kUncertain) = 5.0;
    }
    return p;
}

Dataset identity_dataset() {
    GeneratorConfig cfg;
    cfg.n = 120;
    cfg.d = 8;
    auto ds = generate_dataset(cfg);
    for (auto& s : ds.scans) s.x = encode_findings(s.findings);
    return ds;
}

}  // namespace

TEST_CASE("a truth-revealing captioner is perfect") {
    const auto ds = identity_dataset();
    const auto p = truth_revealing_captioner();
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto r = evaluate(p, nullptr, ds, Split::Test, judge, default_ontology());
    CHECK(r.count == ds.in_split(Split::Test).size());
    CHECK(r.mean_judge_score == 1.0);
    CHECK(r.decision_accuracy == 1.0);
    CHECK_FALSE(r.surrogate_rmse.has_value());
}

TEST_CASE("evaluation with a surrogate reports its error") {
    const auto ds = identity_dataset();
    const auto p = truth_revealing_captioner();
    const auto zero = Surrogate::from_parts(Eigen::MatrixXd::Zero(1, 8), Eigen::VectorXd::Zero(1), {});
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto r = evaluate(p, &zero, ds, Split::Validation, judge, default_ontology());
    REQUIRE(r.surrogate_rmse.has_value());
    CHECK(*r.surrogate_rmse == doctest::Approx(1.0));
    CHECK(*r.mean_surrogate_score == 0.0);
}

TEST_CASE("an empty split is an error") {
    Dataset ds = identity_dataset();
    std::erase_if(ds.scans, [](const Scan& s) { return s.split == Split::Finetune; });
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    CHECK_THROWS_AS(evaluate(truth_revealing_captioner(), nullptr, ds, Split::Finetune, judge, default_ontology()),
                    Error);
}

TEST_CASE("emit_series writes one file per metric") {
    const auto dir = fs::temp_directory_path() / "slog_unit" / "series";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "metrics.csv") << "round,nll_validation,surrogate_rmse_validation,mean_judge_score_heldout,"
                                          "decision_accuracy_heldout,mean_surrogate_score_finetune\n"
                                          "1,5,0.4,0.5,0.9,0.2\n2,4.5,0.3,0.55,0.95,0.25\n";
    const auto files = emit_series(dir);
    CHECK(files.size() == kMetricColumns.size());
    std::ifstream in(dir / "series" / "mean_judge_score_heldout.csv");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text == "round,value\n1,0.5\n2,0.55\n");
    std::ofstream(dir / "metrics.csv", std::ios::app) << "3,1\n";
    CHECK_THROWS_AS(emit_series(dir), ParseError);
}

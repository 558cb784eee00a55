#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "slog/engine.hpp"
#include "slog/errors.hpp"
#include "slog/report_labeler.hpp"
#include "slog/text_metrics.hpp"

using namespace slog;
namespace fs = std::filesystem;

namespace {

const Dataset& small_dataset() {
    static const Dataset ds = [] {
        GeneratorConfig cfg;
        cfg.n = 240;
        return generate_dataset(cfg);
    }();
    return ds;
}

LoopConfig small_config(int rounds = 2) {
    LoopConfig c;
    c.rounds = rounds;
    c.batch_per_round = 8;
    c.pretrain_epochs = 60;
    c.seed = 3;
    return c;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "slog_unit" / name;
    fs::remove_all(dir);
    return dir;
}

bool dir_has_lines(const fs::path& p, std::size_t n) {
    std::ifstream in(p);
    std::size_t count = 0;
    for (std::string line; std::getline(in, line);) count += !line.empty();
    return count == n;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Fails every call; used to check that an aborted round leaves no trace.
class FailingJudge : public ScoreSource {
public:
    std::vector<Judgment> score(std::span<const ScanGuidance>, int) override { throw Error("judge unavailable"); }
    JudgeSource kind() const noexcept override { return JudgeSource::OracleFidelity; }
};

LoopState pretrained_state(const LoopConfig& cfg, const std::string& name) {
    RunDirectory dir(fresh_dir(name));
    return open_run(dir, small_dataset(), default_ontology(), cfg);
}

}  // namespace

TEST_CASE("lambda = 0 reduces to the mean NLL") {
    const auto p = CaptionerParams::random({}, 1, 0.3);
    const auto train = training_examples(small_dataset(), Split::Train, default_ontology());
    Eigen::MatrixXd z(1, 8);
    z.setZero();
    const auto s = Surrogate::fit(z, Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Ones(1), {});
    const auto plain = mean_nll(p, train);
    const auto aug = augmented_loss(p, train, {}, s, 0.0);
    CHECK(aug.loss == plain.loss);
    CHECK(aug.grad == plain.grad);
}

TEST_CASE("penalty with an interpolating single-point surrogate is -q") {
    const auto p = CaptionerParams::random({}, 2, 0.3);
    const auto train = training_examples(small_dataset(), Split::Train, default_ontology());
    const Eigen::VectorXd x = small_dataset().scans[0].x;
    Eigen::MatrixXd z(1, 8);
    z.row(0) = encode(p, x).transpose();
    const auto s = Surrogate::fit(z, Eigen::VectorXd::Constant(1, 0.6), Eigen::VectorXd::Ones(1), {1.0, 1e-12});
    const std::vector<Eigen::VectorXd> fx{x};
    const double penalty = augmented_loss(p, train, fx, s, 1.0).loss - mean_nll(p, train).loss;
    CHECK(std::abs(penalty + 0.6) <= 1e-9);
}

TEST_CASE("empty feedback with a positive lambda is an error") {
    const auto p = CaptionerParams::random({}, 2, 0.3);
    const auto train = training_examples(small_dataset(), Split::Train, default_ontology());
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(1, 8);
    const auto s = Surrogate::fit(z, Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Ones(1), {});
    CHECK_THROWS_AS(augmented_loss(p, train, {}, s, 1.0), ConfigError);
}

TEST_CASE("loop config validation") {
    LoopConfig c;
    CHECK_NOTHROW(c.validate());
    c.guide_weight = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.ablation = true;
    CHECK_NOTHROW(c.validate());
    LoopConfig b;
    b.batch_per_round = 0;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    LoopConfig t;
    t.temperature = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    const auto round_trip = LoopConfig::from_json(small_config().to_json());
    CHECK(round_trip.to_json() == small_config().to_json());
}

TEST_CASE("round batches are drawn without replacement and reshuffled per pass") {
    const auto& ds = small_dataset();
    const std::size_t pool = ds.in_split(Split::Finetune).size();
    REQUIRE(pool == 20);
    std::set<std::string> first_pass;
    for (int r = 0; r < 4; ++r)
        for (const Scan* s : round_batch(ds, r, 5, 9)) CHECK(first_pass.insert(s->id).second);
    CHECK(first_pass.size() == pool);
    std::vector<std::string> a, b;
    for (const Scan* s : round_batch(ds, 0, 20, 9)) a.push_back(s->id);
    for (const Scan* s : round_batch(ds, 1, 20, 9)) b.push_back(s->id);
    CHECK(a != b);
    CHECK(std::set<std::string>(b.begin(), b.end()).size() == pool);
}

TEST_CASE("ablation round with one epoch equals one plain NLL step") {
    auto cfg = small_config(1);
    cfg.guide_weight = 0;
    cfg.ablation = true;
    cfg.epochs_per_round = 1;
    const auto state = pretrained_state(cfg, "reduction");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto result = run_round(state, small_dataset(), default_ontology(), cfg, judge);
    const auto train = training_examples(small_dataset(), Split::Train, default_ontology());
    auto expected = state.params;
    expected.axpy(-cfg.learning_rate, mean_nll(state.params, train).grad);
    CHECK(result.state.params == expected);
}

TEST_CASE("fresh records in round one carry weight one") {
    const auto cfg = small_config(1);
    const auto state = pretrained_state(cfg, "weights");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto result = run_round(state, small_dataset(), default_ontology(), cfg, judge);
    REQUIRE(result.state.feedback.size() == 8);
    for (const auto& r : result.state.feedback) {
        CHECK(r.weight == 1.0);
        CHECK(r.round_created == 1);
        CHECK(r.q >= -1.0);
        CHECK(r.q <= 1.0);
    }
}

TEST_CASE("stale feedback is reweighted by BLEU against the current caption") {
    const auto cfg = small_config(2);
    auto state = pretrained_state(cfg, "stale");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    auto r1 = run_round(state, small_dataset(), default_ontology(), cfg, judge);
    auto r2 = run_round(r1.state, small_dataset(), default_ontology(), cfg, judge);
    REQUIRE(r2.state.feedback.size() == 16);
    for (std::size_t i = 0; i < 8; ++i) {
        const auto& rec = r2.state.feedback[i];
        const auto now = generate(r1.state.params, small_dataset().by_id(rec.scan_id).x, default_ontology());
        CHECK(rec.weight == bleu4(rec.guidance.text, now.text));
    }
    for (std::size_t i = 8; i < 16; ++i) CHECK(r2.state.feedback[i].weight == 1.0);

    auto discard = cfg;
    discard.stale_policy = StalePolicy::Discard;
    CHECK(run_round(r1.state, small_dataset(), default_ontology(), discard, judge).state.feedback.size() == 8);
    auto latest = cfg;
    latest.feedback_mode = FeedbackMode::Latest;
    CHECK(run_round(r1.state, small_dataset(), default_ontology(), latest, judge).state.feedback.size() == 8);
}

TEST_CASE("the surrogate is frozen during fine-tuning and refit every round") {
    const auto cfg = small_config(2);
    auto state = pretrained_state(cfg, "frozen");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    auto r1 = run_round(state, small_dataset(), default_ontology(), cfg, judge);
    const std::string before = r1.surrogate.to_json();
    std::vector<Eigen::VectorXd> fx;
    for (const auto& f : r1.state.feedback) fx.push_back(small_dataset().by_id(f.scan_id).x);
    const auto train = training_examples(small_dataset(), Split::Train, default_ontology());
    (void)fine_tune(r1.state.params, train, fx, r1.surrogate, 1.0, 0.05, 3);
    CHECK(r1.surrogate.to_json() == before);
    auto r2 = run_round(r1.state, small_dataset(), default_ontology(), cfg, judge);
    CHECK(r2.surrogate.fit_id() != r1.surrogate.fit_id());
}

TEST_CASE("metrics are finite and the header is fixed") {
    const auto dir = fresh_dir("metrics");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto m = run_loop(small_dataset(), default_ontology(), small_config(2), dir, judge);
    REQUIRE(m.size() == 2);
    for (const auto& row : m) CHECK(row.all_finite());
    std::ifstream in(dir / "metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == kMetricsHeader);
    CHECK(fs::exists(dir / "checkpoints" / "round_2.json"));
    CHECK(fs::exists(dir / "annotations.jsonl"));
    CHECK(dir_has_lines(dir / "annotations.jsonl", 16));
}

TEST_CASE("zero rounds leaves only the pretrained checkpoint") {
    const auto dir = fresh_dir("r0");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto m = run_loop(small_dataset(), default_ontology(), small_config(0), dir, judge);
    CHECK(m.empty());
    CHECK(fs::exists(dir / "checkpoints" / "round_0.json"));
    CHECK_FALSE(fs::exists(dir / "checkpoints" / "round_1.json"));
    CHECK(slurp(dir / "metrics.csv") == std::string(kMetricsHeader) + "\n");
}

TEST_CASE("runs are deterministic") {
    const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    run_loop(small_dataset(), default_ontology(), small_config(2), a, judge);
    run_loop(small_dataset(), default_ontology(), small_config(2), b, judge);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "checkpoints" / "round_2.json") == slurp(b / "checkpoints" / "round_2.json"));
}

TEST_CASE("an interrupted run resumes to the same result") {
    const auto whole = fresh_dir("resume_whole"), split = fresh_dir("resume_split");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto cfg = small_config(4);
    run_loop(small_dataset(), default_ontology(), cfg, whole, judge);
    RunOptions stop;
    stop.stop_after_round = 2;
    CHECK(run_loop(small_dataset(), default_ontology(), cfg, split, judge, stop).size() == 2);
    CHECK(run_loop(small_dataset(), default_ontology(), cfg, split, judge).size() == 4);
    CHECK(slurp(whole / "metrics.csv") == slurp(split / "metrics.csv"));
    CHECK(slurp(whole / "checkpoints" / "round_4.json") == slurp(split / "checkpoints" / "round_4.json"));
    CHECK(slurp(whole / "feedback.jsonl") == slurp(split / "feedback.jsonl"));
}

TEST_CASE("a round interrupted mid-commit is redone cleanly") {
    const auto whole = fresh_dir("torn_whole"), torn = fresh_dir("torn");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    const auto cfg = small_config(2);
    run_loop(small_dataset(), default_ontology(), cfg, whole, judge);
    RunOptions stop;
    stop.stop_after_round = 1;
    run_loop(small_dataset(), default_ontology(), cfg, torn, judge, stop);
    // Simulate a crash after round 2 wrote its feedback and part of its metrics row.
    {
        RunDirectory dir(torn);
        auto state = open_run(dir, small_dataset(), default_ontology(), cfg);
        auto r2 = run_round(state, small_dataset(), default_ontology(), cfg, judge);
        save_checkpoint(r2.state.params, 2, dir.checkpoint_path(2));
        dir.append_feedback(r2.new_records);
        dir.append_annotations(r2.judgments, 2);
        std::ofstream(torn / "metrics.csv", std::ios::app) << "2,4.1";
    }
    run_loop(small_dataset(), default_ontology(), cfg, torn, judge);
    CHECK(slurp(whole / "metrics.csv") == slurp(torn / "metrics.csv"));
    CHECK(slurp(whole / "feedback.jsonl") == slurp(torn / "feedback.jsonl"));
    CHECK(slurp(whole / "annotations.jsonl").size() == slurp(torn / "annotations.jsonl").size());
}

TEST_CASE("a failed round leaves the run directory untouched") {
    const auto dir = fresh_dir("failed");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    RunOptions stop;
    stop.stop_after_round = 1;
    run_loop(small_dataset(), default_ontology(), small_config(2), dir, judge, stop);
    const std::string metrics = slurp(dir / "metrics.csv");
    const std::string feedback = slurp(dir / "feedback.jsonl");
    FailingJudge failing;
    CHECK_THROWS_AS(run_loop(small_dataset(), default_ontology(), small_config(2), dir, failing), Error);
    CHECK(slurp(dir / "metrics.csv") == metrics);
    CHECK(slurp(dir / "feedback.jsonl") == feedback);
    CHECK_FALSE(fs::exists(dir / "checkpoints" / "round_2.json"));
}

TEST_CASE("resuming with a different configuration is rejected") {
    const auto dir = fresh_dir("mismatch");
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    run_loop(small_dataset(), default_ontology(), small_config(1), dir, judge);
    auto other = small_config(1);
    other.guide_weight = 2.0;
    CHECK_THROWS_AS(run_loop(small_dataset(), default_ontology(), other, dir, judge), ConfigError);
    // Extending the round count is allowed.
    CHECK(run_loop(small_dataset(), default_ontology(), small_config(2), dir, judge).size() == 2);
}

TEST_CASE("a run directory admits one loop at a time") {
    const auto dir = fresh_dir("locked");
    RunLock held(dir);
    CHECK_THROWS_AS(RunLock{dir}, Conflict);
    OracleJudge judge(JudgeSource::OracleFidelity, default_ontology());
    CHECK_THROWS_AS(run_loop(small_dataset(), default_ontology(), small_config(1), dir, judge), Conflict);
}

TEST_CASE("bootstrap with empty reports predicts zero") {
    Dataset ds = small_dataset();
    for (auto& s : ds.scans) s.report.clear();
    const auto params = CaptionerParams::random({}, 1, 0.3);
    const auto r = run_bootstrap(ds, params, default_ontology());
    CHECK(r.test_rmse <= 1e-12);
    CHECK(r.test_score_std == 0.0);
}

TEST_CASE("bootstrap reports a learning curve and test error") {
    const auto& ds = small_dataset();
    const auto params = pretrain({}, training_examples(ds, Split::Train, default_ontology()), {60, 0.5, 0.1, 0});
    BootstrapOptions opts;
    opts.curve_sizes = {25, 50, 100};
    const auto r = run_bootstrap(ds, params, default_ontology(), opts);
    REQUIRE(r.curve.size() == 4);
    CHECK(r.curve.back().n_train == 140);
    CHECK(r.n_test == 40);
    CHECK(r.test_rmse > 0);
    CHECK(r.ratio() == doctest::Approx(r.test_rmse / r.test_score_std));
    CHECK(r.to_json().contains("curve"));
}

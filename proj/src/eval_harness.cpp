#include "slog/eval_harness.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "slog/errors.hpp"

namespace slog {

EvalResult evaluate(const CaptionerParams& params, const Surrogate* surrogate, const Dataset& dataset, Split split,
                    const OracleJudge& judge, const FindingOntology& ontology) {
    const auto scans = dataset.in_split(split);
    if (scans.empty()) throw Error("evaluate: split '" + std::string(to_string(split)) + "' is empty");

    EvalResult r;
    r.count = scans.size();
    double judge_sum = 0, correct = 0, nll_sum = 0, sse = 0, s_sum = 0;
    for (const Scan* scan : scans) {
        const Guidance g = generate(params, scan->x, ontology);
        const double q = judge.score_one(g.text, *scan);
        judge_sum += q;
        if (simulate_decision(g.text, ontology) == true_decision(*scan)) correct += 1;
        nll_sum += nll_loss(params, scan->x, pretraining_targets(*scan, ontology)).loss;
        if (surrogate) {
            const double pred = surrogate->predict(g.z);
            sse += (pred - q) * (pred - q);
            s_sum += pred;
        }
    }
    const double n = static_cast<double>(scans.size());
    r.mean_judge_score = judge_sum / n;
    r.decision_accuracy = correct / n;
    r.mean_nll = nll_sum / n;
    if (surrogate) {
        r.surrogate_rmse = std::sqrt(sse / n);
        r.mean_surrogate_score = s_sum / n;
    }
    return r;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    return out;
}

}  // namespace

std::vector<std::filesystem::path> emit_series(const std::filesystem::path& run_dir) {
    const auto metrics_path = run_dir / "metrics.csv";
    std::ifstream in(metrics_path);
    if (!in) throw Error("emit_series: missing " + metrics_path.string());
    std::string header_line;
    if (!std::getline(in, header_line)) throw Error("emit_series: metrics.csv has no header");
    const auto header = split_csv(header_line);
    if (header.empty() || header[0] != "round") throw ParseError("metrics.csv header must start with 'round'", 1);

    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != header.size()) throw ParseError("metrics.csv row has the wrong number of cells", lineno);
        rows.push_back(std::move(cells));
    }

    const auto dir = run_dir / "series";
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const auto path = dir / (header[c] + ".csv");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "round,value\n";
        for (const auto& row : rows) out << row[0] << ',' << row[c] << '\n';
        if (!out) throw Error("emit_series: failed writing " + path.string());
        written.push_back(path);
    }
    return written;
}

}  // namespace slog

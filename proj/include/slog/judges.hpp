#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slog/core_data.hpp"
#include "slog/errors.hpp"

namespace slog {

enum class JudgeSource { OracleInformativeness, OracleFidelity, Human };

std::string_view to_string(JudgeSource s) noexcept;
JudgeSource parse_judge(std::string_view name);  // "informativeness" | "fidelity" | "human"

struct Judgment {
    std::string scan_id;
    std::string guidance_text;
    double q = 0;
    JudgeSource source = JudgeSource::OracleFidelity;
    bool clamped = false;  // raw score was outside [-1, 1]
};

// info_score of the labeled guidance; ignores the scan.
double judge_informativeness(std::string_view guidance_text, const FindingOntology& ontology);

// +1 per stated label matching the scan's true state, -1 per stated label that does not,
// divided by the number of labels.
double judge_fidelity(std::string_view guidance_text, const Scan& scan, const FindingOntology& ontology);

enum class Decision { Healthy, Diseased };

// Diseased iff any finding in the guidance is labeled Present.
Decision simulate_decision(std::string_view guidance_text, const FindingOntology& ontology);
// Ground truth for the simulated decision maker: diseased iff any true finding is Present.
Decision true_decision(const Scan& scan);

struct ScanGuidance {
    const Scan* scan = nullptr;
    std::string guidance_text;
};

// --- human annotation sessions ---------------------------------------------------------

struct AnnotationItem {
    std::string item_id;
    std::string scan_id;
    std::string scan_summary;
    std::string guidance_text;
};

enum class SessionState { Open, Complete, Cancelled };
std::string_view to_string(SessionState s) noexcept;
SessionState parse_session_state(std::string_view name);

struct SessionSnapshot {
    std::string session_id;
    SessionState state = SessionState::Open;
    std::map<std::string, double> scores;  // item_id -> clamped score
};

class SessionClient {
public:
    virtual ~SessionClient() = default;
    virtual std::string create_session(const std::vector<AnnotationItem>& items, int round) = 0;
    // Blocks until the session is complete or cancelled.
    virtual SessionSnapshot wait_for_completion(const std::string& session_id) = 0;
};

/// Talks to a running annotation service over HTTP and polls until the session closes.
class HttpSessionClient : public SessionClient {
public:
    HttpSessionClient(std::string host, int port,
                      std::chrono::milliseconds poll_interval = std::chrono::milliseconds(250));

    std::string create_session(const std::vector<AnnotationItem>& items, int round) override;
    SessionSnapshot wait_for_completion(const std::string& session_id) override;
    SessionSnapshot fetch(const std::string& session_id);

private:
    std::string host_;
    int port_;
    std::chrono::milliseconds poll_interval_;
};

class SessionCancelled : public Error {
public:
    SessionCancelled(const std::string& what, std::vector<Judgment> completed)
        : Error(what), completed_(std::move(completed)) {}
    [[nodiscard]] const std::vector<Judgment>& completed() const noexcept { return completed_; }

private:
    std::vector<Judgment> completed_;
};

// One session per call; item ids are "item-<index>" in batch order. Throws
// SessionCancelled with the judgments scored so far if the session is cancelled.
std::vector<Judgment> collect_human_scores(std::span<const ScanGuidance> batch, SessionClient& client, int round = 0);

// --- score sources used by the loop ----------------------------------------------------

class ScoreSource {
public:
    virtual ~ScoreSource() = default;
    virtual std::vector<Judgment> score(std::span<const ScanGuidance> batch, int round) = 0;
    [[nodiscard]] virtual JudgeSource kind() const noexcept = 0;
};

class OracleJudge : public ScoreSource {
public:
    OracleJudge(JudgeSource kind, FindingOntology ontology);
    std::vector<Judgment> score(std::span<const ScanGuidance> batch, int round) override;
    [[nodiscard]] JudgeSource kind() const noexcept override { return kind_; }
    [[nodiscard]] double score_one(std::string_view guidance_text, const Scan& scan) const;

private:
    JudgeSource kind_;
    FindingOntology ontology_;
};

class HumanJudge : public ScoreSource {
public:
    explicit HumanJudge(SessionClient& client) : client_(client) {}
    std::vector<Judgment> score(std::span<const ScanGuidance> batch, int round) override {
        return collect_human_scores(batch, client_, round);
    }
    [[nodiscard]] JudgeSource kind() const noexcept override { return JudgeSource::Human; }

private:
    SessionClient& client_;
};

}  // namespace slog

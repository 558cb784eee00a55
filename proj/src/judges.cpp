#include "slog/judges.hpp"

#include <algorithm>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "slog/report_labeler.hpp"

namespace slog {

using nlohmann::json;

std::string_view to_string(JudgeSource s) noexcept {
    switch (s) {
        case JudgeSource::OracleInformativeness: return "oracle_informativeness";
        case JudgeSource::OracleFidelity: return "oracle_fidelity";
        case JudgeSource::Human: return "human";
    }
    return "human";
}

JudgeSource parse_judge(std::string_view name) {
    if (name == "informativeness" || name == "oracle_informativeness") return JudgeSource::OracleInformativeness;
    if (name == "fidelity" || name == "oracle_fidelity") return JudgeSource::OracleFidelity;
    if (name == "human") return JudgeSource::Human;
    throw ConfigError("unknown judge '" + std::string(name) + "'");
}

double judge_informativeness(std::string_view guidance_text, const FindingOntology& ontology) {
    return info_score(label_text(guidance_text, ontology).states);
}

double judge_fidelity(std::string_view guidance_text, const Scan& scan, const FindingOntology& ontology) {
    require(scan.findings.size() == ontology.size(), "judge_fidelity: scan findings must match ontology");
    const auto labels = label_text(guidance_text, ontology);
    double total = 0;
    for (std::size_t k = 0; k < ontology.size(); ++k) {
        if (!labels.mentioned(k)) continue;
        total += labels.states[k] == scan.findings[k] ? 1.0 : -1.0;
    }
    return total / static_cast<double>(ontology.size());
}

Decision simulate_decision(std::string_view guidance_text, const FindingOntology& ontology) {
    const auto labels = label_text(guidance_text, ontology);
    const bool any = std::any_of(labels.states.begin(), labels.states.end(),
                                 [](FindingState s) { return s == FindingState::Present; });
    return any ? Decision::Diseased : Decision::Healthy;
}

Decision true_decision(const Scan& scan) {
    const bool any = std::any_of(scan.findings.begin(), scan.findings.end(),
                                 [](FindingState s) { return s == FindingState::Present; });
    return any ? Decision::Diseased : Decision::Healthy;
}

std::string_view to_string(SessionState s) noexcept {
    switch (s) {
        case SessionState::Open: return "open";
        case SessionState::Complete: return "complete";
        case SessionState::Cancelled: return "cancelled";
    }
    return "open";
}

SessionState parse_session_state(std::string_view name) {
    if (name == "open") return SessionState::Open;
    if (name == "complete") return SessionState::Complete;
    if (name == "cancelled") return SessionState::Cancelled;
    throw ParseError("unknown session state '" + std::string(name) + "'", 0);
}

HttpSessionClient::HttpSessionClient(std::string host, int port, std::chrono::milliseconds poll_interval)
    : host_(std::move(host)), port_(port), poll_interval_(poll_interval) {}

std::string HttpSessionClient::create_session(const std::vector<AnnotationItem>& items, int round) {
    json body = {{"round", round}, {"items", json::array()}};
    for (const auto& it : items)
        body["items"].push_back({{"item_id", it.item_id},
                                 {"scan_id", it.scan_id},
                                 {"scan_summary", it.scan_summary},
                                 {"guidance_text", it.guidance_text}});
    httplib::Client cli(host_, port_);
    auto res = cli.Post("/sessions", body.dump(), "application/json");
    if (!res) throw NetworkError("annotation service unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("create_session failed with HTTP " + std::to_string(res->status) + ": " + res->body);
    return json::parse(res->body).at("session_id").get<std::string>();
}

SessionSnapshot HttpSessionClient::fetch(const std::string& session_id) {
    httplib::Client cli(host_, port_);
    auto res = cli.Get("/sessions/" + session_id);
    if (!res) throw NetworkError("annotation service unreachable: " + httplib::to_string(res.error()));
    if (res->status == 404) throw NotFound("unknown session " + session_id);
    if (res->status != 200) throw Error("session fetch failed with HTTP " + std::to_string(res->status));
    auto j = json::parse(res->body);
    SessionSnapshot snap;
    snap.session_id = session_id;
    snap.state = parse_session_state(j.at("state").get<std::string>());
    snap.scores = j.at("scores").get<std::map<std::string, double>>();
    return snap;
}

SessionSnapshot HttpSessionClient::wait_for_completion(const std::string& session_id) {
    for (;;) {
        auto snap = fetch(session_id);
        if (snap.state != SessionState::Open) return snap;
        std::this_thread::sleep_for(poll_interval_);
    }
}

std::vector<Judgment> collect_human_scores(std::span<const ScanGuidance> batch, SessionClient& client, int round) {
    if (batch.empty()) throw ConfigError("collect_human_scores: empty batch");
    std::vector<AnnotationItem> items;
    items.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        items.push_back({"item-" + std::to_string(i), batch[i].scan->id, batch[i].scan->report, batch[i].guidance_text});

    const std::string sid = client.create_session(items, round);
    const SessionSnapshot snap = client.wait_for_completion(sid);

    std::vector<Judgment> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto it = snap.scores.find(items[i].item_id);
        if (it == snap.scores.end()) continue;
        const double q = std::clamp(it->second, -1.0, 1.0);
        out.push_back({items[i].scan_id, items[i].guidance_text, q, JudgeSource::Human, q != it->second});
    }
    if (snap.state == SessionState::Cancelled)
        throw SessionCancelled("annotation session " + sid + " was cancelled after " + std::to_string(out.size()) +
                                   " of " + std::to_string(items.size()) + " items",
                               std::move(out));
    if (out.size() != items.size()) throw Error("annotation session " + sid + " closed with unscored items");
    return out;
}

OracleJudge::OracleJudge(JudgeSource kind, FindingOntology ontology) : kind_(kind), ontology_(std::move(ontology)) {
    if (kind == JudgeSource::Human) throw ConfigError("OracleJudge cannot impersonate a human judge");
}

double OracleJudge::score_one(std::string_view guidance_text, const Scan& scan) const {
    return kind_ == JudgeSource::OracleFidelity ? judge_fidelity(guidance_text, scan, ontology_)
                                                : judge_informativeness(guidance_text, ontology_);
}

std::vector<Judgment> OracleJudge::score(std::span<const ScanGuidance> batch, int /*round*/) {
    std::vector<Judgment> out;
    out.reserve(batch.size());
    for (const auto& item : batch)
        out.push_back({item.scan->id, item.guidance_text, score_one(item.guidance_text, *item.scan), kind_, false});
    return out;
}

}  // namespace slog

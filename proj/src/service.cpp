#include "slog/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>

#include <httplib.h>

#include "slog/errors.hpp"

#include "file_util.hpp"

namespace slog {

using nlohmann::json;

namespace {

int open_append(const std::filesystem::path& path) {
    int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw Error("cannot open " + path.string() + ": " + std::strerror(errno));
    return fd;
}

// One full line, then fsync. Returns only once the bytes are on stable storage.
void durable_append(int fd, const std::string& line) {
    std::string buf = line + '\n';
    const char* p = buf.data();
    std::size_t left = buf.size();
    while (left > 0) {
        ssize_t n = ::write(fd, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("append failed: ") + std::strerror(errno));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0) throw Error(std::string("fsync failed: ") + std::strerror(errno));
}

std::string utc_timestamp() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const std::time_t t = system_clock::to_time_t(now);
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

json item_json(const AnnotationItem& it) {
    return json{{"item_id", it.item_id},
                {"scan_id", it.scan_id},
                {"scan_summary", it.scan_summary},
                {"guidance_text", it.guidance_text}};
}

AnnotationItem item_from(const json& j) {
    return {j.at("item_id").get<std::string>(), j.value("scan_id", std::string()),
            j.value("scan_summary", std::string()), j.value("guidance_text", std::string())};
}

// Reads JSONL; a malformed *final* line is an unacknowledged torn write and is skipped.
std::vector<json> read_jsonl_tolerant(const std::filesystem::path& path) {
    std::vector<std::string> lines;
    std::ifstream in(path, std::ios::binary);
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(std::move(line));
    std::vector<json> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(json::parse(lines[i]));
        } catch (const json::exception& e) {
            if (i + 1 == lines.size()) break;
            throw ParseError(path.filename().string() + ": " + e.what(), i + 1);
        }
    }
    return out;
}

}  // namespace

// --- SessionStore ---------------------------------------------------------------------

SessionStore::SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    for (const char* name : {"sessions.jsonl", "annotations.jsonl"})
        if (std::filesystem::exists(dir_ / name)) detail::truncate_torn_tail(dir_ / name);
    replay();
    sessions_fd_ = open_append(dir_ / "sessions.jsonl");
    annotations_fd_ = open_append(dir_ / "annotations.jsonl");
}

SessionStore::~SessionStore() {
    shutdown();
    if (sessions_fd_ >= 0) ::close(sessions_fd_);
    if (annotations_fd_ >= 0) ::close(annotations_fd_);
}

void SessionStore::replay() {
    for (const auto& ev : read_jsonl_tolerant(dir_ / "sessions.jsonl")) {
        const auto kind = ev.value("event", std::string("create"));
        const auto id = ev.at("session_id").get<std::string>();
        if (kind == "create") {
            Session s;
            s.id = id;
            s.round = ev.value("round", 0);
            for (const auto& it : ev.at("items")) s.items.push_back(item_from(it));
            order_.push_back(id);
            sessions_[id] = std::move(s);
        } else if (kind == "cancel") {
            auto it = sessions_.find(id);
            if (it != sessions_.end()) it->second.state = SessionState::Cancelled;
        }
    }
    for (const auto& a : read_jsonl_tolerant(dir_ / "annotations.jsonl")) {
        if (a.value("source", std::string()) != "human" || !a.contains("session_id")) continue;
        auto it = sessions_.find(a.at("session_id").get<std::string>());
        if (it == sessions_.end()) continue;
        it->second.scores[a.at("item_id").get<std::string>()] = a.at("score").get<double>();
    }
    for (auto& [id, s] : sessions_)
        if (s.state == SessionState::Open && s.scores.size() == s.items.size()) s.state = SessionState::Complete;
}

SessionStore::Session& SessionStore::find(const std::string& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    return it->second;
}

const SessionStore::Session& SessionStore::find(const std::string& id) const {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    return it->second;
}

std::string SessionStore::create(const std::vector<AnnotationItem>& items, int round) {
    if (items.empty()) throw ConfigError("a session needs at least one item");
    std::set<std::string> ids;
    for (const auto& it : items) {
        if (it.item_id.empty()) throw ConfigError("item_id must be non-empty");
        if (!ids.insert(it.item_id).second) throw ConfigError("duplicate item_id '" + it.item_id + "'");
    }
    std::lock_guard lock(mu_);
    Session s;
    s.id = "session-" + std::to_string(order_.size() + 1);
    s.round = round;
    s.items = items;
    json ev = {{"event", "create"}, {"session_id", s.id}, {"round", round}, {"items", json::array()}};
    for (const auto& it : items) ev["items"].push_back(item_json(it));
    durable_append(sessions_fd_, ev.dump());
    const std::string id = s.id;
    order_.push_back(id);
    sessions_[id] = std::move(s);
    return id;
}

std::optional<std::string> SessionStore::find_open(const std::vector<AnnotationItem>& items, int round) const {
    auto same = [](const AnnotationItem& a, const AnnotationItem& b) {
        return a.item_id == b.item_id && a.scan_id == b.scan_id && a.guidance_text == b.guidance_text;
    };
    std::lock_guard lock(mu_);
    for (const auto& id : order_) {
        const Session& s = sessions_.at(id);
        if (s.state != SessionState::Open || s.round != round || s.items.size() != items.size()) continue;
        if (std::equal(items.begin(), items.end(), s.items.begin(), same)) return id;
    }
    return std::nullopt;
}

std::optional<AnnotationItem> SessionStore::next_item(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    const Session& s = find(session_id);
    if (s.state != SessionState::Open) return std::nullopt;
    for (const auto& it : s.items)
        if (!s.scores.count(it.item_id)) return it;
    return std::nullopt;
}

SubmitAck SessionStore::submit(const std::string& session_id, const std::string& item_id, double score) {
    if (!std::isfinite(score)) throw ConfigError("score must be a finite number");
    std::unique_lock lock(mu_);
    Session& s = find(session_id);
    auto item = std::find_if(s.items.begin(), s.items.end(), [&](const auto& it) { return it.item_id == item_id; });
    if (item == s.items.end()) throw NotFound("unknown item '" + item_id + "' in session '" + session_id + "'");
    if (s.scores.count(item_id)) throw Conflict("item '" + item_id + "' is already scored");
    if (s.state != SessionState::Open)
        throw Conflict("session '" + session_id + "' is " + std::string(to_string(s.state)));

    SubmitAck ack;
    ack.stored = std::clamp(score, -1.0, 1.0);
    ack.clamped = ack.stored != score;
    json line = {{"session_id", session_id}, {"item_id", item_id}, {"scan_id", item->scan_id},
                 {"score", ack.stored},      {"source", "human"},  {"round", s.round},
                 {"timestamp", utc_timestamp()}};
    if (ack.clamped) line["clamped_from"] = score;
    durable_append(annotations_fd_, line.dump());

    s.scores[item_id] = ack.stored;
    if (s.scores.size() == s.items.size()) s.state = SessionState::Complete;
    lock.unlock();
    cv_.notify_all();
    return ack;
}

void SessionStore::cancel(const std::string& session_id) {
    std::unique_lock lock(mu_);
    Session& s = find(session_id);
    if (s.state == SessionState::Complete) throw Conflict("session '" + session_id + "' is already complete");
    if (s.state == SessionState::Cancelled) return;
    durable_append(sessions_fd_, json{{"event", "cancel"}, {"session_id", session_id}}.dump());
    s.state = SessionState::Cancelled;
    lock.unlock();
    cv_.notify_all();
}

SessionSnapshot SessionStore::snapshot_locked(const Session& s) const { return {s.id, s.state, s.scores}; }

SessionSnapshot SessionStore::snapshot(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    return snapshot_locked(find(session_id));
}

json SessionStore::describe(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    const Session& s = find(session_id);
    json items = json::array();
    for (const auto& it : s.items) {
        json j = item_json(it);
        auto sc = s.scores.find(it.item_id);
        j["score"] = sc == s.scores.end() ? json(nullptr) : json(sc->second);
        items.push_back(std::move(j));
    }
    return json{{"session_id", s.id},
                {"state", std::string(to_string(s.state))},
                {"round", s.round},
                {"items", items},
                {"scores", s.scores},
                {"scored", s.scores.size()},
                {"total", s.items.size()}};
}

std::vector<std::string> SessionStore::session_ids() const {
    std::lock_guard lock(mu_);
    return order_;
}

SessionSnapshot SessionStore::wait_until_closed(const std::string& session_id) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closing_ || find(session_id).state != SessionState::Open; });
    SessionSnapshot snap = snapshot_locked(find(session_id));
    if (snap.state == SessionState::Open) snap.state = SessionState::Cancelled;
    return snap;
}

void SessionStore::shutdown() {
    {
        std::lock_guard lock(mu_);
        closing_ = true;
    }
    cv_.notify_all();
}

// --- LoopController -------------------------------------------------------------------

namespace {

// Records the session id of the round in flight so /loop/status can report it.
class TrackingClient : public SessionClient {
public:
    TrackingClient(SessionStore& store, std::mutex& mu, std::optional<std::string>& pending)
        : store_(store), inner_(store), mu_(mu), pending_(pending) {}
    std::string create_session(const std::vector<AnnotationItem>& items, int round) override {
        // A round restarted after a crash regenerates the same items; keep the scores already given.
        auto existing = store_.find_open(items, round);
        auto id = existing ? *existing : inner_.create_session(items, round);
        std::lock_guard lock(mu_);
        pending_ = id;
        return id;
    }
    SessionSnapshot wait_for_completion(const std::string& session_id) override {
        return inner_.wait_for_completion(session_id);
    }

private:
    SessionStore& store_;
    InProcessSessionClient inner_;
    std::mutex& mu_;
    std::optional<std::string>& pending_;
};

json metrics_json(const RoundMetrics& m) {
    return json{{"round", m.round},
                {"nll_validation", m.nll_validation},
                {"surrogate_rmse_validation", m.surrogate_rmse_validation},
                {"mean_judge_score_heldout", m.mean_judge_score_heldout},
                {"decision_accuracy_heldout", m.decision_accuracy_heldout},
                {"mean_surrogate_score_finetune", m.mean_surrogate_score_finetune}};
}

}  // namespace

LoopController::LoopController(std::filesystem::path run_dir, Dataset dataset, FindingOntology ontology,
                               LoopConfig config, SessionStore& store)
    : run_dir_(std::move(run_dir)),
      dataset_(std::move(dataset)),
      ontology_(std::move(ontology)),
      config_(std::move(config)),
      store_(store) {
    RunLock lock(run_dir_);
    RunDirectory dir(run_dir_);
    auto state = open_run(dir, dataset_, ontology_, config_);
    round_ = state.round;
    auto metrics = dir.read_metrics();
    if (!metrics.empty()) latest_ = metrics.back();
}

LoopController::~LoopController() {
    store_.shutdown();
    join();
}

void LoopController::step() {
    std::lock_guard lock(mu_);
    if (running_) throw Conflict("a round is already running");
    if (pending_session_) {
        auto snap = store_.snapshot(*pending_session_);
        if (snap.state == SessionState::Open) throw Conflict("pending session " + *pending_session_ + " is incomplete");
    }
    auto run_lock = std::make_unique<RunLock>(run_dir_);  // Conflict if another loop holds it
    if (worker_.joinable()) worker_.join();
    running_ = true;
    last_error_.reset();
    worker_ = std::thread(&LoopController::work, this, std::move(run_lock));
}

void LoopController::work(std::unique_ptr<RunLock> lock) {
    try {
        RunDirectory dir(run_dir_);
        LoopState state = open_run(dir, dataset_, ontology_, config_);
        std::unique_ptr<ScoreSource> judge;
        TrackingClient client(store_, mu_, pending_session_);
        if (config_.judge == JudgeSource::Human)
            judge = std::make_unique<HumanJudge>(client);
        else
            judge = std::make_unique<OracleJudge>(config_.judge, ontology_);
        auto result = run_round(state, dataset_, ontology_, config_, *judge);
        commit_round(dir, result);
        std::lock_guard g(mu_);
        round_ = result.state.round;
        latest_ = result.metrics;
        pending_session_.reset();
    } catch (const std::exception& e) {
        std::lock_guard g(mu_);
        last_error_ = e.what();
        pending_session_.reset();
    }
    lock.reset();
    std::lock_guard g(mu_);
    running_ = false;
}

json LoopController::status() const {
    std::lock_guard lock(mu_);
    return json{{"round", round_},
                {"metrics", latest_ ? metrics_json(*latest_) : json(nullptr)},
                {"pending_session", pending_session_ ? json(*pending_session_) : json(nullptr)},
                {"running", running_},
                {"judge", std::string(to_string(config_.judge))},
                {"last_error", last_error_ ? json(*last_error_) : json(nullptr)}};
}

void LoopController::join() {
    if (worker_.joinable()) worker_.join();
}

// --- AnnotationServer -----------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, json{{"error", msg}});
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const NotFound& e) {
        send_error(res, 404, e.what());
    } catch (const Conflict& e) {
        send_error(res, 409, e.what());
    } catch (const ConfigError& e) {
        send_error(res, 400, e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

}  // namespace

AnnotationServer::AnnotationServer(SessionStore& store, LoopController* loop)
    : store_(store), loop_(loop), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::install_routes() {
    auto& srv = *server_;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = json::parse(req.body);
            std::vector<AnnotationItem> items;
            for (const auto& it : body.at("items")) items.push_back(item_from(it));
            int round = body.value("round", 0);
            if (!body.contains("round") && loop_) round = loop_->status().at("round").get<int>() + 1;
            send_json(res, 200, json{{"session_id", store_.create(items, round)}});
        });
    });

    srv.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            json list = json::array();
            for (const auto& id : store_.session_ids())
                list.push_back({{"session_id", id}, {"state", std::string(to_string(store_.snapshot(id).state))}});
            send_json(res, 200, json{{"sessions", list}});
        });
    });

    srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, store_.describe(req.matches[1])); });
    });

    srv.Get(R"(/sessions/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string sid = req.matches[1];
            auto item = store_.next_item(sid);
            if (!item) {
                res.status = 204;
                return;
            }
            const auto desc = store_.describe(sid);
            send_json(res, 200,
                      json{{"item_id", item->item_id},
                           {"scan_summary", item->scan_summary},
                           {"guidance_text", item->guidance_text},
                           {"scored", desc.at("scored")},
                           {"total", desc.at("total")}});
        });
    });

    srv.Post(R"(/sessions/([^/]+)/scores)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = json::parse(req.body);
            const auto& score = body.at("score");
            if (!score.is_number()) throw ConfigError("score must be a number");
            auto ack = store_.submit(req.matches[1], body.at("item_id").get<std::string>(), score.get<double>());
            send_json(res, 200, json{{"accepted", ack.accepted}, {"clamped", ack.clamped}, {"score", ack.stored}});
        });
    });

    srv.Post(R"(/sessions/([^/]+)/cancel)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            store_.cancel(req.matches[1]);
            send_json(res, 200, json{{"cancelled", true}});
        });
    });

    srv.Get("/loop/status", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            if (!loop_) {
                send_json(res, 200, json{{"round", 0}, {"metrics", nullptr}, {"pending_session", nullptr},
                                         {"running", false}, {"configured", false}});
                return;
            }
            send_json(res, 200, loop_->status());
        });
    });

    srv.Post("/loop/step", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            if (!loop_) throw Conflict("no loop is configured for this service");
            loop_->step();
            send_json(res, 200, json{{"started", true}});
        });
    });
}

int AnnotationServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound <= 0) throw Error("could not bind annotation server on " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) throw Error("could not bind annotation server on port " + std::to_string(port));
    return port;
}

void AnnotationServer::serve() { server_->listen_after_bind(); }

int AnnotationServer::start_background(const std::string& host) {
    const int port = bind(host, 0);
    thread_ = std::thread([this] { serve(); });
    server_->wait_until_ready();
    return port;
}

void AnnotationServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace slog

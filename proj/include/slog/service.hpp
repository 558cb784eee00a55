#pragma once

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slog/core_data.hpp"
#include "slog/engine.hpp"
#include "slog/judges.hpp"

namespace httplib {
class Server;
}

namespace slog {

struct SubmitAck {
    bool accepted = true;
    bool clamped = false;
    double stored = 0;
};

/// Annotation sessions with write-ahead persistence.
///
/// Session creation and cancellation go to sessions.jsonl; every accepted score goes to
/// annotations.jsonl. Both appends are fsync'ed before the call returns, and the
/// constructor replays both files, so an acknowledged score survives a crash.
/// All mutations are serialized by one mutex.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path dir);
    ~SessionStore();
    SessionStore(const SessionStore&) = delete;
    SessionStore& operator=(const SessionStore&) = delete;

    // Throws ConfigError for an empty batch or repeated item ids.
    std::string create(const std::vector<AnnotationItem>& items, int round);
    // First unscored item in order; nullopt once every item is scored or the session closed.
    std::optional<AnnotationItem> next_item(const std::string& session_id) const;
    // NotFound for unknown ids, Conflict for repeated scores or a closed session.
    SubmitAck submit(const std::string& session_id, const std::string& item_id, double score);
    void cancel(const std::string& session_id);
    // An open session for `round` with exactly these items, if one exists.
    [[nodiscard]] std::optional<std::string> find_open(const std::vector<AnnotationItem>& items, int round) const;

    [[nodiscard]] SessionSnapshot snapshot(const std::string& session_id) const;
    [[nodiscard]] nlohmann::json describe(const std::string& session_id) const;
    [[nodiscard]] std::vector<std::string> session_ids() const;

    // Blocks until the session is complete or cancelled (or the store shuts down).
    SessionSnapshot wait_until_closed(const std::string& session_id);
    // Wakes every waiter; open sessions are reported as cancelled to them.
    void shutdown();

private:
    struct Session {
        std::string id;
        int round = 0;
        std::vector<AnnotationItem> items;
        std::map<std::string, double> scores;
        SessionState state = SessionState::Open;
    };

    void replay();
    Session& find(const std::string& id);
    const Session& find(const std::string& id) const;
    SessionSnapshot snapshot_locked(const Session& s) const;

    std::filesystem::path dir_;
    int sessions_fd_ = -1;
    int annotations_fd_ = -1;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, Session> sessions_;
    std::vector<std::string> order_;
    bool closing_ = false;
};

// SessionClient that talks to a SessionStore in the same process.
class InProcessSessionClient : public SessionClient {
public:
    explicit InProcessSessionClient(SessionStore& store) : store_(store) {}
    std::string create_session(const std::vector<AnnotationItem>& items, int round) override {
        return store_.create(items, round);
    }
    SessionSnapshot wait_for_completion(const std::string& session_id) override {
        return store_.wait_until_closed(session_id);
    }

private:
    SessionStore& store_;
};

/// Runs loop rounds on a worker thread, one at a time, against a run directory.
class LoopController {
public:
    LoopController(std::filesystem::path run_dir, Dataset dataset, FindingOntology ontology, LoopConfig config,
                   SessionStore& store);
    ~LoopController();

    // Throws Conflict when a round is already running or the run directory is locked.
    void step();
    [[nodiscard]] nlohmann::json status() const;
    // Waits for the running round, if any, to finish.
    void join();

private:
    void work(std::unique_ptr<RunLock> lock);

    std::filesystem::path run_dir_;
    Dataset dataset_;
    FindingOntology ontology_;
    LoopConfig config_;
    SessionStore& store_;

    mutable std::mutex mu_;
    std::thread worker_;
    bool running_ = false;
    int round_ = 0;
    std::optional<RoundMetrics> latest_;
    std::optional<std::string> pending_session_;
    std::optional<std::string> last_error_;
};

/// HTTP front end for the store and (optionally) the loop controller.
class AnnotationServer {
public:
    AnnotationServer(SessionStore& store, LoopController* loop);
    ~AnnotationServer();

    // Port 0 picks an ephemeral port. Returns the bound port; throws Error on failure.
    int bind(const std::string& host, int port);
    // Serves on the calling thread until stop().
    void serve();
    // bind() on an ephemeral port, then serve() on a background thread.
    int start_background(const std::string& host = "127.0.0.1");
    void stop();

private:
    void install_routes();

    SessionStore& store_;
    LoopController* loop_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace slog

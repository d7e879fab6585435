#pragma once

#include "json.hpp"

#include <atomic>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace toxiscope {

/// Scripted OpenAI-compatible LM server for tests and offline demos.
///
/// Chat replies come from, in order: the scripted queue, a fixture keyed by
/// the hash of the request's messages, the responder hook, and finally an echo
/// of the last user message. Logprob scoring replays fixtures keyed by the
/// hash of the scored prompt (context + output); unscripted prompts get a
/// deterministic hash-derived score. Embeddings likewise.
class MockLmServer {
public:
    struct ChatScript {
        std::string reply;
        int status = 200;                       // non-2xx is returned as an error body
        std::vector<std::string> chunks;        // streaming deltas; default splits reply
        std::optional<std::size_t> disconnect_after;  // drop the stream after k chunks
    };

    struct ScoreFixture {
        std::string context;
        std::string output;
        std::vector<double> logprobs;
        std::vector<std::string> tokens;  // defaults to an even split of output
    };

    using Responder = std::function<std::optional<std::string>(const nlohmann::json& request)>;

    MockLmServer();  // binds 127.0.0.1 on an ephemeral port and starts serving
    ~MockLmServer();
    MockLmServer(const MockLmServer&) = delete;
    MockLmServer& operator=(const MockLmServer&) = delete;

    /// Listens on host:port (port 0 picks one). Used by the standalone tool.
    explicit MockLmServer(const std::string& host, int port);

    int port() const { return port_; }
    std::string base_url() const;  // http://127.0.0.1:port/v1

    void script_chat(ChatScript script);
    void script_chat(const std::string& reply) { script_chat(ChatScript{reply}); }
    void set_chat_fixture(const std::vector<nlohmann::json>& messages, std::string reply);
    void set_responder(Responder responder);

    void add_score_fixture(ScoreFixture fixture);
    void set_embedding(const std::string& text, std::vector<double> vector);
    void set_embedder(std::function<std::vector<double>(const std::string&)> embedder);
    /// The next n requests on any endpoint fail with this status.
    void fail_next(std::size_t n, int status = 500);
    void set_latency_ms(int ms) { latency_ms_ = ms; }

    /// Fixture file: {"chat":[{"last_user"|"request_hash", "reply"}],
    /// "scores":[{"context","output","logprobs",["tokens"]}],
    /// "embeddings":[{"text","vector"}]}
    void load_fixtures(const std::filesystem::path& path);

    std::size_t chat_calls() const { return chat_calls_; }
    std::size_t stream_calls() const { return stream_calls_; }
    std::size_t score_calls() const { return score_calls_; }
    std::size_t embedding_calls() const { return embedding_calls_; }
    std::size_t total_calls() const {
        return chat_calls_ + stream_calls_ + score_calls_ + embedding_calls_;
    }
    std::size_t max_concurrent() const { return max_concurrent_; }
    std::vector<nlohmann::json> chat_requests() const;
    void reset_counters();

    static std::string messages_hash(const std::vector<nlohmann::json>& messages);
    static std::vector<double> hash_embedding(const std::string& text, std::size_t dim = 8);
    static std::vector<double> hash_logprobs(const std::string& context,
                                             const std::vector<std::string>& tokens);
    static std::vector<std::string> split_tokens(const std::string& text, std::size_t parts);
    static std::vector<std::string> word_tokens(const std::string& text);

private:
    void install_routes();
    std::optional<std::pair<int, std::string>> take_failure();
    ChatScript resolve_chat(const nlohmann::json& request);

    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;

    mutable std::mutex mutex_;
    std::deque<ChatScript> chat_queue_;
    std::map<std::string, std::string> chat_fixtures_;     // messages hash -> reply
    std::map<std::string, std::string> last_user_replies_;  // last user content -> reply
    Responder responder_;
    std::map<std::string, ScoreFixture> score_fixtures_;   // sha256(prompt) -> fixture
    std::map<std::string, std::vector<double>> embeddings_;
    std::function<std::vector<double>(const std::string&)> embedder_;
    std::size_t failures_left_ = 0;
    int failure_status_ = 500;
    std::vector<nlohmann::json> chat_requests_;

    std::atomic<int> latency_ms_{0};
    std::atomic<std::size_t> chat_calls_{0};
    std::atomic<std::size_t> stream_calls_{0};
    std::atomic<std::size_t> score_calls_{0};
    std::atomic<std::size_t> embedding_calls_{0};
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_concurrent_{0};
};

}  // namespace toxiscope

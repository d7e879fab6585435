#include "toxiscope/mock_lm.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include "httplib.h"

#include <chrono>
#include <cmath>

namespace toxiscope {

using nlohmann::json;

namespace {

struct InFlight {
    std::atomic<std::size_t>& counter;
    InFlight(std::atomic<std::size_t>& c, std::atomic<std::size_t>& peak) : counter(c) {
        auto now = ++counter;
        auto prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
    }
    ~InFlight() { --counter; }
};

void reply_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
    reply_json(res, {{"error", {{"message", message}, {"type", "mock_error"}}}}, status);
}

std::string last_user_content(const json& request) {
    const auto& messages = request.value("messages", json::array());
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
        if (it->value("role", "") == "user") return it->value("content", "");
    return {};
}

}  // namespace

MockLmServer::MockLmServer() : MockLmServer("127.0.0.1", 0) {}

MockLmServer::MockLmServer(const std::string& host, int port)
    : server_(std::make_unique<httplib::Server>()) {
    install_routes();
    port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (port_ <= 0) fail(ErrorCode::PreconditionViolation, "mock LM server cannot bind " + host);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

MockLmServer::~MockLmServer() {
    server_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string MockLmServer::base_url() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1";
}

void MockLmServer::script_chat(ChatScript script) {
    std::lock_guard lock(mutex_);
    chat_queue_.push_back(std::move(script));
}

void MockLmServer::set_chat_fixture(const std::vector<json>& messages, std::string reply) {
    std::lock_guard lock(mutex_);
    chat_fixtures_[messages_hash(messages)] = std::move(reply);
}

void MockLmServer::set_responder(Responder responder) {
    std::lock_guard lock(mutex_);
    responder_ = std::move(responder);
}

void MockLmServer::add_score_fixture(ScoreFixture fixture) {
    if (fixture.tokens.empty()) fixture.tokens = split_tokens(fixture.output, fixture.logprobs.size());
    if (fixture.tokens.size() != fixture.logprobs.size())
        fail(ErrorCode::ValidationError, "score fixture: tokens and logprobs differ in length");
    std::lock_guard lock(mutex_);
    score_fixtures_[sha256_hex(fixture.context + fixture.output)] = std::move(fixture);
}

void MockLmServer::set_embedding(const std::string& text, std::vector<double> vector) {
    std::lock_guard lock(mutex_);
    embeddings_[text] = std::move(vector);
}

void MockLmServer::set_embedder(std::function<std::vector<double>(const std::string&)> embedder) {
    std::lock_guard lock(mutex_);
    embedder_ = std::move(embedder);
}

void MockLmServer::fail_next(std::size_t n, int status) {
    std::lock_guard lock(mutex_);
    failures_left_ = n;
    failure_status_ = status;
}

void MockLmServer::load_fixtures(const std::filesystem::path& path) {
    json doc = json::parse(read_file(path));
    for (const auto& c : doc.value("chat", json::array())) {
        std::lock_guard lock(mutex_);
        if (c.contains("request_hash"))
            chat_fixtures_[c["request_hash"].get<std::string>()] = c.at("reply").get<std::string>();
        else
            last_user_replies_[c.at("last_user").get<std::string>()] = c.at("reply").get<std::string>();
    }
    for (const auto& s : doc.value("scores", json::array())) {
        ScoreFixture f;
        f.context = s.value("context", "");
        f.output = s.at("output").get<std::string>();
        f.logprobs = s.at("logprobs").get<std::vector<double>>();
        if (s.contains("tokens")) f.tokens = s["tokens"].get<std::vector<std::string>>();
        add_score_fixture(std::move(f));
    }
    for (const auto& e : doc.value("embeddings", json::array()))
        set_embedding(e.at("text").get<std::string>(), e.at("vector").get<std::vector<double>>());
}

std::vector<json> MockLmServer::chat_requests() const {
    std::lock_guard lock(mutex_);
    return chat_requests_;
}

void MockLmServer::reset_counters() {
    chat_calls_ = stream_calls_ = score_calls_ = embedding_calls_ = 0;
    max_concurrent_ = 0;
    std::lock_guard lock(mutex_);
    chat_requests_.clear();
}

std::string MockLmServer::messages_hash(const std::vector<json>& messages) {
    return sha256_hex(json(messages).dump());
}

std::vector<double> MockLmServer::hash_embedding(const std::string& text, std::size_t dim) {
    auto digest = sha256_hex(text);
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        auto byte = std::stoi(digest.substr((2 * i) % 64, 2), nullptr, 16);
        v[i] = byte / 127.5 - 1.0;
    }
    return v;
}

std::vector<double> MockLmServer::hash_logprobs(const std::string& context,
                                                const std::vector<std::string>& tokens) {
    auto ctx = sha256_hex(context);
    std::vector<double> out;
    for (const auto& t : tokens) {
        auto h = sha256_hex(ctx + t);
        out.push_back(-(1 + std::stoi(h.substr(0, 4), nullptr, 16) % 300) / 100.0);
    }
    return out;
}

std::vector<std::string> MockLmServer::split_tokens(const std::string& text, std::size_t parts) {
    if (parts == 0 || text.size() < parts)
        fail(ErrorCode::ValidationError, "cannot split output into that many tokens");
    std::vector<std::string> out;
    std::size_t base = text.size() / parts, extra = text.size() % parts, pos = 0;
    for (std::size_t i = 0; i < parts; ++i) {
        std::size_t len = base + (i < extra ? 1 : 0);
        out.push_back(text.substr(pos, len));
        pos += len;
    }
    return out;
}

std::vector<std::string> MockLmServer::word_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        cur.push_back(c);
        if (c == ' ' || c == '\n') {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::optional<std::pair<int, std::string>> MockLmServer::take_failure() {
    std::lock_guard lock(mutex_);
    if (failures_left_ == 0) return std::nullopt;
    --failures_left_;
    return std::make_pair(failure_status_, std::string("injected failure"));
}

MockLmServer::ChatScript MockLmServer::resolve_chat(const json& request) {
    Responder responder;
    {
        std::lock_guard lock(mutex_);
        chat_requests_.push_back(request);
        if (!chat_queue_.empty()) {
            auto s = std::move(chat_queue_.front());
            chat_queue_.pop_front();
            return s;
        }
        auto messages = request.value("messages", json::array()).get<std::vector<json>>();
        if (auto it = chat_fixtures_.find(messages_hash(messages)); it != chat_fixtures_.end())
            return ChatScript{it->second};
        if (auto it = last_user_replies_.find(last_user_content(request));
            it != last_user_replies_.end())
            return ChatScript{it->second};
        responder = responder_;
    }
    if (responder)
        if (auto reply = responder(request)) return ChatScript{*reply};
    std::string echo = last_user_content(request);
    if (request.value("max_tokens", 0) == 1) {
        auto words = word_tokens(echo);
        echo = words.empty() ? std::string() : std::string(trim(words.front()));
    }
    return ChatScript{echo};
}

void MockLmServer::install_routes() {
    auto latency = [this] {
        if (int ms = latency_ms_.load(); ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    };

    server_->Post("/v1/chat/completions", [this, latency](const httplib::Request& req,
                                                          httplib::Response& res) {
        InFlight guard(in_flight_, max_concurrent_);
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error&) {
            return reply_error(res, 400, "invalid json");
        }
        const bool stream = body.value("stream", false);
        (stream ? stream_calls_ : chat_calls_)++;
        latency();
        if (auto f = take_failure()) return reply_error(res, f->first, f->second);
        auto script = resolve_chat(body);
        if (script.status < 200 || script.status >= 300)
            return reply_error(res, script.status, script.reply);

        if (!stream) {
            return reply_json(res, {{"id", "mock-chat"},
                                    {"object", "chat.completion"},
                                    {"model", body.value("model", "mock")},
                                    {"choices",
                                     {{{"index", 0},
                                       {"message", {{"role", "assistant"}, {"content", script.reply}}},
                                       {"finish_reason", "stop"}}}}});
        }
        auto chunks = script.chunks.empty() ? word_tokens(script.reply) : script.chunks;
        if (chunks.empty()) chunks.push_back("");
        auto state = std::make_shared<std::size_t>(0);
        auto cut = script.disconnect_after;
        res.set_chunked_content_provider(
            "text/event-stream",
            [chunks, state, cut](std::size_t, httplib::DataSink& sink) {
                if (cut && *state >= *cut) return false;  // abrupt close
                if (*state < chunks.size()) {
                    json ev = {{"choices", {{{"index", 0}, {"delta", {{"content", chunks[*state]}}}}}}};
                    std::string line = "data: " + ev.dump() + "\n\n";
                    ++*state;
                    return sink.write(line.data(), line.size());
                }
                std::string done = "data: [DONE]\n\n";
                sink.write(done.data(), done.size());
                sink.done();
                return true;
            });
    });

    server_->Post("/v1/completions", [this, latency](const httplib::Request& req,
                                                     httplib::Response& res) {
        InFlight guard(in_flight_, max_concurrent_);
        ++score_calls_;
        latency();
        if (auto f = take_failure()) return reply_error(res, f->first, f->second);
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error&) {
            return reply_error(res, 400, "invalid json");
        }
        const std::string prompt = body.value("prompt", "");
        std::optional<ScoreFixture> fixture;
        {
            std::lock_guard lock(mutex_);
            if (auto it = score_fixtures_.find(sha256_hex(prompt)); it != score_fixtures_.end())
                fixture = it->second;
        }
        json tokens = json::array(), logprobs = json::array(), offsets = json::array();
        if (fixture) {
            if (!fixture->context.empty()) {
                tokens.push_back(fixture->context);
                logprobs.push_back(nullptr);
                offsets.push_back(0);
            }
            std::size_t off = fixture->context.size();
            for (std::size_t i = 0; i < fixture->tokens.size(); ++i) {
                tokens.push_back(fixture->tokens[i]);
                logprobs.push_back(fixture->logprobs[i]);
                offsets.push_back(off);
                off += fixture->tokens[i].size();
            }
        } else {
            // Unscripted: every word is a token; the first carries no logprob.
            auto words = word_tokens(prompt);
            std::size_t off = 0;
            std::string context;
            for (std::size_t i = 0; i < words.size(); ++i) {
                tokens.push_back(words[i]);
                if (i == 0) {
                    logprobs.push_back(nullptr);
                } else {
                    logprobs.push_back(hash_logprobs(context, {words[i]}).front());
                }
                offsets.push_back(off);
                off += words[i].size();
                context += words[i];
            }
        }
        reply_json(res, {{"id", "mock-cmpl"},
                         {"object", "text_completion"},
                         {"choices",
                          {{{"index", 0},
                            {"text", prompt},
                            {"logprobs",
                             {{"tokens", tokens},
                              {"token_logprobs", logprobs},
                              {"text_offset", offsets}}},
                            {"finish_reason", "length"}}}}});
    });

    server_->Post("/v1/embeddings", [this, latency](const httplib::Request& req,
                                                    httplib::Response& res) {
        InFlight guard(in_flight_, max_concurrent_);
        ++embedding_calls_;
        latency();
        if (auto f = take_failure()) return reply_error(res, f->first, f->second);
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error&) {
            return reply_error(res, 400, "invalid json");
        }
        std::vector<std::string> inputs;
        if (body["input"].is_string())
            inputs.push_back(body["input"].get<std::string>());
        else
            inputs = body.value("input", std::vector<std::string>{});
        json data = json::array();
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            std::vector<double> v;
            {
                std::lock_guard lock(mutex_);
                if (auto it = embeddings_.find(inputs[i]); it != embeddings_.end())
                    v = it->second;
                else if (embedder_)
                    v = embedder_(inputs[i]);
            }
            if (v.empty()) v = hash_embedding(inputs[i]);
            data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", v}});
        }
        reply_json(res, {{"object", "list"}, {"data", data}});
    });

    server_->Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
        reply_json(res, {{"status", "ok"}});
    });
}

}  // namespace toxiscope

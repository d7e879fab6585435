#include "toxiscope/lm_gateway.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace toxiscope {

using nlohmann::json;

std::string_view to_string(Capability capability) {
    switch (capability) {
        case Capability::Chat: return "chat";
        case Capability::Stream: return "stream";
        case Capability::Logprobs: return "logprobs";
        case Capability::Embeddings: return "embeddings";
    }
    return "unknown";
}

Capability parse_capability(std::string_view name) {
    auto lower = to_lower(trim(name));
    if (lower == "chat") return Capability::Chat;
    if (lower == "stream") return Capability::Stream;
    if (lower == "logprobs") return Capability::Logprobs;
    if (lower == "embeddings") return Capability::Embeddings;
    fail(ErrorCode::ValidationError, "unknown capability '" + std::string(name) + "'");
}

void validate_provider(const ProviderSpec& spec) {
    if (spec.provider_id.empty()) fail(ErrorCode::ValidationError, "provider id is empty");
    if (spec.capabilities.empty())
        fail(ErrorCode::ValidationError, "provider '" + spec.provider_id + "' has no capabilities");
    if (spec.max_parallel < 1)
        fail(ErrorCode::ValidationError, "provider '" + spec.provider_id + "': max_parallel < 1");
    if (spec.base_url.rfind("http://", 0) != 0 && spec.base_url.rfind("https://", 0) != 0)
        fail(ErrorCode::ValidationError,
             "provider '" + spec.provider_id + "': base_url must be http(s)");
}

std::vector<double> l2_normalize(std::vector<double> v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm))
        fail(ErrorCode::InvalidResponse, "cannot normalize a zero or non-finite vector");
    for (double& x : v) x /= norm;
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) fail(ErrorCode::InvalidResponse, "vector dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// ---------------------------------------------------------------------------

struct LmGateway::Provider {
    ProviderSpec spec;
    std::string origin;  // scheme://host:port
    std::string prefix;  // path prefix, e.g. "/v1"
    std::mutex mutex;
    std::condition_variable cv;
    std::size_t in_flight = 0;

    class Permit {
    public:
        explicit Permit(Provider& p) : p_(p) {
            std::unique_lock lock(p_.mutex);
            p_.cv.wait(lock, [&] { return p_.in_flight < p_.spec.max_parallel; });
            ++p_.in_flight;
        }
        ~Permit() {
            {
                std::lock_guard lock(p_.mutex);
                --p_.in_flight;
            }
            p_.cv.notify_one();
        }
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;

    private:
        Provider& p_;
    };

    std::unique_ptr<httplib::Client> client() const {
        auto c = std::make_unique<httplib::Client>(origin);
        c->set_connection_timeout(std::min(spec.timeout_seconds, 10), 0);
        c->set_read_timeout(spec.timeout_seconds, 0);
        c->set_write_timeout(spec.timeout_seconds, 0);
        return c;
    }

    httplib::Headers headers() const {
        httplib::Headers h;
        if (!spec.auth_env_var.empty()) {
            if (const char* key = std::getenv(spec.auth_env_var.c_str()); key && *key)
                h.emplace("Authorization", std::string("Bearer ") + key);
        }
        return h;
    }

    void backoff(std::size_t attempt) const {
        if (spec.backoff_ms <= 0) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(spec.backoff_ms) * (1 << attempt));
    }
};

namespace {

bool is_context_overflow(int status, const std::string& body) {
    if (status != 400 && status != 413) return false;
    auto lower = to_lower(body);
    return contains(lower, "context_length_exceeded") || contains(lower, "maximum context length") ||
           contains(lower, "context length");
}

[[noreturn]] void raise_for_status(const std::string& provider, int status,
                                   const std::string& body) {
    if (is_context_overflow(status, body))
        fail(ErrorCode::ContextTooLong, "provider '" + provider + "': context too long");
    fail(ErrorCode::LmUnavailable,
         "provider '" + provider + "' returned HTTP " + std::to_string(status) + ": " +
             body.substr(0, 200));
}

json messages_json(const std::vector<ChatMessage>& messages) {
    json arr = json::array();
    for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
    return arr;
}

json chat_body(const std::string& model, const std::vector<ChatMessage>& messages,
               const ChatParams& params, bool stream) {
    json body = {{"model", model},
                 {"messages", messages_json(messages)},
                 {"temperature", params.temperature},
                 {"max_tokens", params.max_tokens},
                 {"stream", stream}};
    if (params.seed) body["seed"] = *params.seed;
    return body;
}

}  // namespace

LmGateway::LmGateway() = default;
LmGateway::~LmGateway() = default;

void LmGateway::add_provider(ProviderSpec spec) {
    validate_provider(spec);
    auto p = std::make_unique<Provider>();
    auto scheme_end = spec.base_url.find("://");
    auto path_start = spec.base_url.find('/', scheme_end + 3);
    p->origin = spec.base_url.substr(0, path_start);
    p->prefix = path_start == std::string::npos ? "" : spec.base_url.substr(path_start);
    while (!p->prefix.empty() && p->prefix.back() == '/') p->prefix.pop_back();
    p->spec = std::move(spec);
    std::lock_guard lock(mutex_);
    auto id = p->spec.provider_id;
    providers_[id] = std::move(p);
}

bool LmGateway::has_provider(const std::string& provider_id) const {
    std::lock_guard lock(mutex_);
    return providers_.count(provider_id) > 0;
}

const ProviderSpec& LmGateway::provider(const std::string& provider_id) const {
    std::lock_guard lock(mutex_);
    auto it = providers_.find(provider_id);
    if (it == providers_.end())
        fail(ErrorCode::LmUnavailable, "provider '" + provider_id + "' is not configured");
    return it->second->spec;
}

std::vector<std::string> LmGateway::provider_ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, p] : providers_) ids.push_back(id);
    return ids;
}

LmGateway::Provider& LmGateway::slot(const std::string& provider_id, Capability needed) {
    Provider* p = nullptr;
    {
        std::lock_guard lock(mutex_);
        auto it = providers_.find(provider_id);
        if (it == providers_.end())
            fail(ErrorCode::LmUnavailable, "provider '" + provider_id + "' is not configured");
        p = it->second.get();
    }
    if (!p->spec.has(needed)) {
        if (needed == Capability::Logprobs)
            fail(ErrorCode::LogprobsUnsupported,
                 "provider '" + provider_id + "' does not report logprobs");
        fail(ErrorCode::CapabilityMissing, "provider '" + provider_id + "' lacks capability '" +
                                               std::string(to_string(needed)) + "'");
    }
    return *p;
}

json LmGateway::post_json(Provider& p, const std::string& endpoint, const json& body) {
    const std::string payload = body.dump();
    RequestLogEntry entry{p.spec.provider_id, endpoint, sha256_hex(payload), {}, 0, 0,
                          now_iso8601()};
    auto record = [&] {
        spdlog::debug("lm {} {} req={} resp={} status={} attempts={}", entry.provider_id,
                      entry.endpoint, entry.request_hash.substr(0, 12),
                      entry.response_hash.substr(0, 12), entry.status, entry.attempts);
        std::lock_guard lock(log_mutex_);
        log_.push_back(entry);
    };

    Provider::Permit permit(p);
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= p.spec.max_retries; ++attempt) {
        if (attempt) p.backoff(attempt - 1);
        ++entry.attempts;
        auto client = p.client();
        auto res = client->Post(p.prefix + endpoint, p.headers(), payload, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        entry.status = res->status;
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        entry.response_hash = sha256_hex(res->body);
        if (res->status < 200 || res->status >= 300) {
            record();
            raise_for_status(p.spec.provider_id, res->status, res->body);
        }
        record();
        try {
            return json::parse(res->body);
        } catch (const json::parse_error&) {
            fail(ErrorCode::InvalidResponse,
                 "provider '" + p.spec.provider_id + "' returned non-JSON body");
        }
    }
    record();
    fail(ErrorCode::LmUnavailable, "provider '" + p.spec.provider_id + "' unavailable after " +
                                       std::to_string(entry.attempts) + " attempts: " + last_error);
}

std::string LmGateway::chat(const std::string& provider_id,
                            const std::vector<ChatMessage>& messages, const ChatParams& params) {
    auto& p = slot(provider_id, Capability::Chat);
    auto resp = post_json(p, "/chat/completions",
                          chat_body(p.spec.model_name, messages, params, false));
    try {
        const auto& content = resp.at("choices").at(0).at("message").at("content");
        return content.is_null() ? std::string() : content.get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidResponse, std::string("malformed chat response: ") + e.what());
    }
}

std::string LmGateway::stream_chat(const std::string& provider_id,
                                   const std::vector<ChatMessage>& messages,
                                   const ChatParams& params, const DeltaSink& sink) {
    auto& p = slot(provider_id, Capability::Stream);
    const std::string payload = chat_body(p.spec.model_name, messages, params, true).dump();
    RequestLogEntry entry{p.spec.provider_id, "/chat/completions#stream", sha256_hex(payload), {},
                          0, 0, now_iso8601()};
    auto record = [&] {
        std::lock_guard lock(log_mutex_);
        log_.push_back(entry);
    };

    Provider::Permit permit(p);
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= p.spec.max_retries; ++attempt) {
        if (attempt) p.backoff(attempt - 1);
        ++entry.attempts;

        std::string text;
        std::string pending;  // unparsed SSE bytes
        std::string error_body;
        bool done = false;
        int status = 0;

        auto handle_event = [&](const std::string& data) {
            if (data == "[DONE]") {
                done = true;
                return;
            }
            json chunk;
            try {
                chunk = json::parse(data);
            } catch (const json::parse_error&) {
                return;
            }
            if (!chunk.contains("choices") || chunk["choices"].empty()) return;
            const auto& choice = chunk["choices"][0];
            if (choice.contains("delta") && choice["delta"].contains("content") &&
                choice["delta"]["content"].is_string()) {
                auto delta = choice["delta"]["content"].get<std::string>();
                if (!delta.empty()) {
                    text += delta;
                    if (sink) sink(delta);
                }
            }
        };

        httplib::Request req;
        req.method = "POST";
        req.path = p.prefix + "/chat/completions";
        req.headers = p.headers();
        req.set_header("Content-Type", "application/json");
        req.set_header("Accept", "text/event-stream");
        req.body = payload;
        req.response_handler = [&](const httplib::Response& r) {
            status = r.status;
            return true;
        };
        req.content_receiver = [&](const char* data, std::size_t n, std::uint64_t,
                                   std::uint64_t) {
            if (status < 200 || status >= 300) {
                error_body.append(data, n);
                return true;
            }
            pending.append(data, n);
            for (auto pos = pending.find('\n'); pos != std::string::npos;
                 pos = pending.find('\n')) {
                std::string line = pending.substr(0, pos);
                pending.erase(0, pos + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (line.rfind("data:", 0) == 0) handle_event(std::string(trim(line.substr(5))));
            }
            return true;
        };

        httplib::Response res;
        httplib::Error err = httplib::Error::Success;
        bool ok = p.client()->send(req, res, err);
        entry.status = status;

        if (!text.empty() && (!ok || !done)) {
            record();
            throw Error(ErrorCode::StreamInterrupted,
                        "stream from '" + p.spec.provider_id + "' interrupted")
                .with_partial(text);
        }
        if (!ok) {
            last_error = httplib::to_string(err);
            continue;
        }
        if (status >= 500) {
            last_error = "HTTP " + std::to_string(status);
            continue;
        }
        if (status < 200 || status >= 300) {
            record();
            raise_for_status(p.spec.provider_id, status, error_body);
        }
        if (!done) {
            record();
            throw Error(ErrorCode::StreamInterrupted,
                        "stream from '" + p.spec.provider_id + "' ended without completion")
                .with_partial(text);
        }
        entry.response_hash = sha256_hex(text);
        record();
        return text;
    }
    record();
    fail(ErrorCode::LmUnavailable, "provider '" + p.spec.provider_id + "' unavailable after " +
                                       std::to_string(entry.attempts) + " attempts: " + last_error);
}

std::vector<TokenScore> LmGateway::score_output(const std::string& provider_id,
                                                const std::string& input,
                                                const std::string& output) {
    auto& p = slot(provider_id, Capability::Logprobs);
    if (output.empty()) fail(ErrorCode::PreconditionViolation, "output text to score is empty");

    json body = {{"model", p.spec.model_name},
                 {"prompt", input + output},
                 {"max_tokens", 0},
                 {"echo", true},
                 {"logprobs", 1},
                 {"temperature", 0.0}};
    auto resp = post_json(p, "/completions", body);

    std::vector<TokenScore> scores;
    try {
        const auto& lp = resp.at("choices").at(0).at("logprobs");
        const auto& tokens = lp.at("tokens");
        const auto& logprobs = lp.at("token_logprobs");
        if (tokens.size() != logprobs.size())
            fail(ErrorCode::InvalidResponse, "tokens and token_logprobs lengths differ");
        std::vector<std::size_t> offsets;
        if (lp.contains("text_offset") && lp["text_offset"].is_array()) {
            offsets = lp["text_offset"].get<std::vector<std::size_t>>();
        } else {
            std::size_t off = 0;
            for (const auto& t : tokens) {
                offsets.push_back(off);
                off += t.get<std::string>().size();
            }
        }
        if (offsets.size() != tokens.size())
            fail(ErrorCode::InvalidResponse, "text_offset length differs from tokens");

        const double scale = p.spec.logprob_base > 0.0 ? std::log(p.spec.logprob_base) : 1.0;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            auto tok = tokens[i].get<std::string>();
            if (offsets[i] + tok.size() <= input.size() && !(tok.empty() && offsets[i] >= input.size()))
                continue;  // belongs to the context
            if (logprobs[i].is_null()) continue;
            double value = logprobs[i].get<double>() * scale;
            if (!std::isfinite(value))
                fail(ErrorCode::InvalidResponse, "non-finite logprob for token '" + tok + "'");
            scores.push_back({std::move(tok), value});
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidResponse, std::string("malformed logprobs response: ") + e.what());
    }
    if (scores.empty())
        fail(ErrorCode::InvalidResponse, "provider returned no scored tokens for the output");
    return scores;
}

std::vector<std::vector<double>> LmGateway::embed(const std::string& provider_id,
                                                  const std::vector<std::string>& texts) {
    auto& p = slot(provider_id, Capability::Embeddings);
    if (texts.empty()) fail(ErrorCode::PreconditionViolation, "no texts to embed");
    auto resp = post_json(p, "/embeddings", {{"model", p.spec.model_name}, {"input", texts}});

    std::vector<std::vector<double>> out(texts.size());
    try {
        const auto& data = resp.at("data");
        if (data.size() != texts.size())
            fail(ErrorCode::InvalidResponse, "embedding count differs from input count");
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::size_t idx = data[i].value("index", i);
            if (idx >= out.size()) fail(ErrorCode::InvalidResponse, "embedding index out of range");
            out[idx] = l2_normalize(data[i].at("embedding").get<std::vector<double>>());
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidResponse, std::string("malformed embeddings response: ") + e.what());
    }
    for (const auto& v : out)
        if (v.empty() || v.size() != out.front().size())
            fail(ErrorCode::InvalidResponse, "embeddings have inconsistent dimensions");
    return out;
}

std::vector<RequestLogEntry> LmGateway::request_log() const {
    std::lock_guard lock(log_mutex_);
    return log_;
}

}  // namespace toxiscope

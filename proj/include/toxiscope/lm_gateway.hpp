#pragma once

#include "json.hpp"

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace toxiscope {

enum class Capability { Chat, Stream, Logprobs, Embeddings };

std::string_view to_string(Capability capability);
Capability parse_capability(std::string_view name);

struct ProviderSpec {
    std::string provider_id;
    /// Includes the API version prefix, e.g. "http://127.0.0.1:11434/v1".
    std::string base_url;
    std::string model_name;
    /// Environment variable holding the API key; empty for local runners.
    std::string auth_env_var;
    std::set<Capability> capabilities;
    std::size_t max_parallel = 4;
    std::size_t max_retries = 2;
    int backoff_ms = 200;
    int timeout_seconds = 120;
    /// Base of the logprobs the provider reports; 0 means natural log.
    double logprob_base = 0.0;

    bool has(Capability c) const { return capabilities.count(c) > 0; }
};

void validate_provider(const ProviderSpec& spec);

struct ChatMessage {
    std::string role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatParams {
    double temperature = 0.0;
    int max_tokens = 512;
    std::optional<long long> seed;
};

struct TokenScore {
    std::string token_text;
    double logprob = 0.0;  // nats
};

using DeltaSink = std::function<void(std::string_view delta)>;

struct RequestLogEntry {
    std::string provider_id;
    std::string endpoint;
    std::string request_hash;
    std::string response_hash;
    int status = 0;  // last HTTP status, 0 when no response
    std::size_t attempts = 0;
    std::string timestamp;
};

/// OpenAI-compatible client for chat, streaming chat, echo+logprobs scoring
/// and embeddings. Retries network failures and 5xx with exponential backoff;
/// in-flight requests per provider never exceed max_parallel.
class LmGateway {
public:
    LmGateway();
    ~LmGateway();
    LmGateway(const LmGateway&) = delete;
    LmGateway& operator=(const LmGateway&) = delete;

    void add_provider(ProviderSpec spec);
    bool has_provider(const std::string& provider_id) const;
    const ProviderSpec& provider(const std::string& provider_id) const;
    std::vector<std::string> provider_ids() const;

    std::string chat(const std::string& provider_id, const std::vector<ChatMessage>& messages,
                     const ChatParams& params = {});

    /// Every delta reaches the sink in order; the returned text is their
    /// concatenation. A broken stream raises StreamInterrupted with the
    /// partial text attached.
    std::string stream_chat(const std::string& provider_id,
                            const std::vector<ChatMessage>& messages, const ChatParams& params,
                            const DeltaSink& sink);

    /// Per-token logprobs of `output` conditioned on `input`.
    std::vector<TokenScore> score_output(const std::string& provider_id, const std::string& input,
                                         const std::string& output);

    /// Unit-normalized embeddings, one per text.
    std::vector<std::vector<double>> embed(const std::string& provider_id,
                                           const std::vector<std::string>& texts);

    std::vector<RequestLogEntry> request_log() const;

private:
    struct Provider;
    Provider& slot(const std::string& provider_id, Capability needed);
    nlohmann::json post_json(Provider& p, const std::string& endpoint, const nlohmann::json& body);

    mutable std::mutex mutex_;
    std::map<std::string, std::unique_ptr<Provider>> providers_;
    mutable std::mutex log_mutex_;
    std::vector<RequestLogEntry> log_;
};

std::vector<double> l2_normalize(std::vector<double> v);
double dot(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace toxiscope

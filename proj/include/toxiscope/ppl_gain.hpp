#pragma once

#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/store.hpp"

#include "json.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace toxiscope {

enum class Granularity { Message, Sentence };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view name);

/// "alice: " for a turn with a speaker, empty otherwise.
std::string speaker_prefix(const MessageRecord& turn);
/// Speaker-prefixed turns joined by newlines; the input X of an attribution.
std::string render_conversation(const ConversationRecord& conversation);

/// One removable piece of the input. Concatenating prefix + text + separator
/// over all units in order reproduces the rendered conversation exactly.
struct AttributionUnit {
    std::size_t index = 0;  // 1-based
    std::string text;
    Granularity granularity = Granularity::Message;
    std::size_t turn_position = 0;  // 0-based position in the conversation
    std::optional<std::uint64_t> turn_index;
    std::optional<std::size_t> sentence_offset;  // byte offset inside the turn text
    std::string prefix;       // speaker prefix; only on the first unit of a turn
    std::string turn_prefix;  // speaker prefix of the owning turn
    std::string separator;    // whitespace following the unit
};

std::vector<AttributionUnit> segment_units(const ConversationRecord& conversation,
                                           Granularity granularity);

std::string reconstruct(std::span<const AttributionUnit> units);
/// Input with unit `index` (1-based) removed. Separators are repaired: a turn
/// that loses its first sentence keeps its speaker prefix, and no dangling
/// newline is left behind.
std::string ablate(std::span<const AttributionUnit> units, std::size_t index);

/// exp of the mean negative log-likelihood (nats).
double perplexity(std::span<const TokenScore> scores);

struct RelevanceScore {
    std::size_t unit_index = 0;
    double gain = 0.0;
    double ppl_full = 0.0;
    double ppl_ablated = 0.0;
};

/// Clamps negative gains to 0 and divides by the largest positive gain.
std::vector<double> heatmap_normalize(std::span<const RelevanceScore> scores);

/// (provider, sha256(X), sha256(Y)) -> token scores.
class ScoreCache {
public:
    std::optional<std::vector<TokenScore>> get(const std::string& provider,
                                               const std::string& input,
                                               const std::string& output) const;
    void put(const std::string& provider, const std::string& input, const std::string& output,
             std::vector<TokenScore> scores);
    std::size_t size() const;

private:
    static std::string key(const std::string& provider, const std::string& input,
                           const std::string& output);
    mutable std::mutex mutex_;
    std::map<std::string, std::vector<TokenScore>> entries_;
};

struct PplGainOptions {
    Granularity granularity = Granularity::Message;
    /// Wraps the (possibly ablated) conversation before scoring.
    std::string context_template = "{conversation}";
    ScoreCache* cache = nullptr;
    std::function<bool()> cancelled;
};

struct PplGainResult {
    std::string input;
    std::string output;
    std::vector<AttributionUnit> units;
    double ppl_full = 0.0;
    std::vector<RelevanceScore> scores;  // unit index order
    std::vector<double> intensities;
};

/// Scores Y against the full conversation once and against each single-unit
/// ablation once: N + 1 scoring calls, run concurrently up to the provider's
/// max_parallel.
PplGainResult perplexity_gain(const ConversationRecord& conversation, const std::string& output,
                              LmGateway& gateway, const std::string& provider_id,
                              const PplGainOptions& options = {});

nlohmann::json to_json(const PplGainResult& result);

}  // namespace toxiscope

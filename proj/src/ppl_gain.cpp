#include "toxiscope/ppl_gain.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace toxiscope {

using nlohmann::json;

std::string_view to_string(Granularity g) {
    return g == Granularity::Sentence ? "sentence" : "message";
}

Granularity parse_granularity(std::string_view name) {
    auto lower = to_lower(trim(name));
    if (lower == "message") return Granularity::Message;
    if (lower == "sentence") return Granularity::Sentence;
    fail(ErrorCode::ValidationError, "unknown granularity '" + std::string(name) + "'");
}

std::string speaker_prefix(const MessageRecord& turn) {
    return turn.speaker ? *turn.speaker + ": " : std::string();
}

std::string render_conversation(const ConversationRecord& conversation) {
    std::string out;
    for (std::size_t i = 0; i < conversation.turns.size(); ++i) {
        if (i) out.push_back('\n');
        out += speaker_prefix(conversation.turns[i]) + conversation.turns[i].text;
    }
    return out;
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

struct Piece {
    std::size_t offset;
    std::string text;
    std::string separator;
};

// Splits after a run of terminal punctuation followed by whitespace, but only
// when more text follows; trailing whitespace stays inside the last sentence.
std::vector<Piece> split_sentences(const std::string& text) {
    std::vector<Piece> out;
    std::size_t start = 0, i = 0;
    while (i < text.size()) {
        if (is_terminal(text[i])) {
            std::size_t end = i;
            while (end + 1 < text.size() && is_terminal(text[end + 1])) ++end;
            std::size_t ws = end + 1;
            while (ws < text.size() && is_space(text[ws])) ++ws;
            if (ws > end + 1 && ws < text.size()) {
                out.push_back({start, text.substr(start, end + 1 - start),
                               text.substr(end + 1, ws - end - 1)});
                start = ws;
                i = ws;
                continue;
            }
            i = end + 1;
            continue;
        }
        ++i;
    }
    out.push_back({start, text.substr(start), ""});
    return out;
}

std::string join_units(std::span<const AttributionUnit> units, std::size_t skip_index) {
    std::string out;
    const AttributionUnit* prev = nullptr;
    for (const auto& u : units) {
        if (u.index == skip_index) continue;
        bool first_of_turn = !prev || prev->turn_position != u.turn_position;
        if (prev) out += first_of_turn ? std::string("\n") : prev->separator;
        if (first_of_turn) out += u.turn_prefix;
        out += u.text;
        prev = &u;
    }
    return out;
}

}  // namespace

std::vector<AttributionUnit> segment_units(const ConversationRecord& conversation,
                                           Granularity granularity) {
    if (conversation.turns.empty())
        fail(ErrorCode::EmptyConversation, "conversation '" + conversation.key + "' has no turns");
    std::vector<AttributionUnit> units;
    const std::size_t n_turns = conversation.turns.size();
    for (std::size_t t = 0; t < n_turns; ++t) {
        const auto& turn = conversation.turns[t];
        const std::string prefix = speaker_prefix(turn);
        const std::string turn_sep = t + 1 < n_turns ? "\n" : "";
        if (granularity == Granularity::Message) {
            AttributionUnit u;
            u.index = units.size() + 1;
            u.text = turn.text;
            u.granularity = granularity;
            u.turn_position = t;
            u.turn_index = turn.turn_index;
            u.prefix = u.turn_prefix = prefix;
            u.separator = turn_sep;
            units.push_back(std::move(u));
            continue;
        }
        auto pieces = split_sentences(turn.text);
        for (std::size_t k = 0; k < pieces.size(); ++k) {
            AttributionUnit u;
            u.index = units.size() + 1;
            u.text = pieces[k].text;
            u.granularity = granularity;
            u.turn_position = t;
            u.turn_index = turn.turn_index;
            u.sentence_offset = pieces[k].offset;
            u.turn_prefix = prefix;
            if (k == 0) u.prefix = prefix;
            u.separator = k + 1 < pieces.size() ? pieces[k].separator : turn_sep;
            units.push_back(std::move(u));
        }
    }
    return units;
}

std::string reconstruct(std::span<const AttributionUnit> units) {
    std::string out;
    for (const auto& u : units) out += u.prefix + u.text + u.separator;
    return out;
}

std::string ablate(std::span<const AttributionUnit> units, std::size_t index) {
    if (index < 1 || index > units.size())
        fail(ErrorCode::PreconditionViolation, "unit index out of range");
    return join_units(units, index);
}

double perplexity(std::span<const TokenScore> scores) {
    if (scores.empty()) fail(ErrorCode::EmptyScores, "no token scores");
    double nll = 0.0;
    for (const auto& s : scores) nll -= s.logprob;
    return std::exp(nll / static_cast<double>(scores.size()));
}

std::vector<double> heatmap_normalize(std::span<const RelevanceScore> scores) {
    double max_gain = 0.0;
    for (const auto& s : scores) max_gain = std::max(max_gain, s.gain);
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& s : scores)
        out.push_back(max_gain > 0.0 ? std::max(s.gain, 0.0) / max_gain : 0.0);
    return out;
}

// ---------------------------------------------------------------------------

std::string ScoreCache::key(const std::string& provider, const std::string& input,
                            const std::string& output) {
    return provider + "\x1f" + sha256_hex(input) + "\x1f" + sha256_hex(output);
}

std::optional<std::vector<TokenScore>> ScoreCache::get(const std::string& provider,
                                                       const std::string& input,
                                                       const std::string& output) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key(provider, input, output));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ScoreCache::put(const std::string& provider, const std::string& input,
                     const std::string& output, std::vector<TokenScore> scores) {
    std::lock_guard lock(mutex_);
    entries_[key(provider, input, output)] = std::move(scores);
}

std::size_t ScoreCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

PplGainResult perplexity_gain(const ConversationRecord& conversation, const std::string& output,
                              LmGateway& gateway, const std::string& provider_id,
                              const PplGainOptions& options) {
    const auto& provider = gateway.provider(provider_id);
    if (!provider.has(Capability::Logprobs))
        fail(ErrorCode::LogprobsUnsupported,
             "provider '" + provider_id + "' does not report logprobs");
    if (output.empty()) fail(ErrorCode::PreconditionViolation, "output Y is empty");

    PplGainResult result;
    result.units = segment_units(conversation, options.granularity);
    result.input = reconstruct(result.units);
    result.output = output;
    const std::size_t n = result.units.size();

    // Slot 0 is the full input, slot i the input without unit i.
    std::vector<std::string> contexts(n + 1);
    contexts[0] = substitute(options.context_template, {{"conversation", result.input}});
    for (std::size_t i = 1; i <= n; ++i)
        contexts[i] = substitute(options.context_template,
                                 {{"conversation", ablate(result.units, i)}});

    std::vector<double> ppl(n + 1, 0.0);
    parallel_for(n + 1, provider.max_parallel, [&](std::size_t slot) {
        if (options.cancelled && options.cancelled())
            fail(ErrorCode::Cancelled, "perplexity gain cancelled");
        std::optional<std::vector<TokenScore>> scores;
        if (options.cache) scores = options.cache->get(provider_id, contexts[slot], output);
        if (!scores) {
            scores = gateway.score_output(provider_id, contexts[slot], output);
            if (options.cache) options.cache->put(provider_id, contexts[slot], output, *scores);
        }
        ppl[slot] = perplexity(*scores);
    });

    result.ppl_full = ppl[0];
    for (std::size_t i = 1; i <= n; ++i)
        result.scores.push_back({i, ppl[i] - ppl[0], ppl[0], ppl[i]});
    result.intensities = heatmap_normalize(result.scores);
    return result;
}

json to_json(const PplGainResult& result) {
    json units = json::array();
    for (const auto& u : result.units) {
        json j = {{"index", u.index},
                  {"text", u.text},
                  {"granularity", std::string(to_string(u.granularity))},
                  {"turn_position", u.turn_position},
                  {"prefix", u.prefix},
                  {"separator", u.separator}};
        if (u.turn_index) j["turn_index"] = *u.turn_index;
        if (u.sentence_offset) j["sentence_offset"] = *u.sentence_offset;
        units.push_back(std::move(j));
    }
    json scores = json::array();
    for (std::size_t i = 0; i < result.scores.size(); ++i) {
        const auto& s = result.scores[i];
        scores.push_back({{"index", s.unit_index},
                          {"gain", s.gain},
                          {"ppl_ablated", s.ppl_ablated},
                          {"intensity", result.intensities[i]}});
    }
    return {{"units", units},
            {"output", result.output},
            {"ppl_full", result.ppl_full},
            {"scores", scores}};
}

}  // namespace toxiscope

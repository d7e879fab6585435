#pragma once

#include "toxiscope/chunker.hpp"
#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/store.hpp"

#include "json.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace toxiscope {

/// message id -> predicted label
using LabelMap = std::map<std::string, std::string>;

/// Shipped per-speaker instruction (resources/prompts/summarize_speaker.txt).
std::string default_summary_template();

/// {conversation}: speaker-prefixed turns, newline-joined.
/// {toxic_messages}: "n. [label] speaker: text" for each turn whose label is
/// not negative, or "none". {speaker} is filled when given.
std::string build_summary_prompt(std::span<const MessageRecord> turns, const LabelMap& labels,
                                 const std::string& instruction_template,
                                 const std::set<std::string>& negative_labels,
                                 const std::optional<std::string>& speaker = std::nullopt);

/// Ids of turns carrying a toxic label, in turn order.
std::vector<std::string> flagged_ids(std::span<const MessageRecord> turns, const LabelMap& labels,
                                     const std::set<std::string>& negative_labels);

struct ToxicAwareSummary {
    std::string conversation_key;
    std::string group_id;
    std::string chunk_id;
    std::map<std::string, std::string> per_speaker;
    std::vector<std::string> failed_speakers;
    std::vector<std::string> flagged_refs;

    bool failed() const { return per_speaker.empty() && !failed_speakers.empty(); }
};

struct SummaryParams {
    std::string instruction_template = default_summary_template();
    std::set<std::string> negative_labels;
    ChatParams chat;
    ChunkerParams chunker;
    std::size_t parallelism = 2;
};

struct SummaryHooks {
    std::function<void(std::size_t total)> on_total;
    std::function<void(std::size_t completed)> on_chunk_done;
    std::function<bool()> cancelled;
};

/// One chat call per speaker in the chunk. LM failures are recorded per
/// speaker instead of propagating.
ToxicAwareSummary summarize_chunk(const ConversationRecord& conversation, const Chunk& chunk,
                                  const LabelMap& labels, LmGateway& gateway,
                                  const std::string& provider_id, const SummaryParams& params,
                                  const std::function<bool()>& cancelled = {});

struct ConversationSummary {
    std::string conversation_key;
    std::vector<Chunk> chunks;
    std::vector<TopicGroup> groups;
    std::vector<ToxicAwareSummary> summaries;  // chunk order
};

/// chunk -> regroup -> summarize every chunk. Throws LmUnavailable when every
/// chunk fails and Cancelled when the hook fires.
ConversationSummary summarize_conversation(const ConversationRecord& conversation,
                                           const LabelMap& labels, LmGateway& gateway,
                                           const std::string& chat_provider,
                                           const std::string& embed_provider,
                                           const SummaryParams& params = {},
                                           const SummaryHooks& hooks = {});

/// {conversation_key, chunks, groups, results: group -> chunk -> speaker -> text,
///  flagged: chunk -> ids, failed: chunk -> speakers}
nlohmann::json to_json(const ConversationSummary& summary);

/// Chronologically ordered summaries that mention `speaker`.
std::vector<std::string> speaker_summaries(const ConversationSummary& summary,
                                           const std::string& speaker);

}  // namespace toxiscope

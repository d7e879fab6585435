#include "toxiscope/summarize.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/ppl_gain.hpp"
#include "toxiscope/util.hpp"

#include <spdlog/spdlog.h>

#include <atomic>

namespace toxiscope {

using nlohmann::json;

std::string default_summary_template() {
    return read_file(std::filesystem::path(TOXISCOPE_RESOURCE_DIR) / "prompts" /
                     "summarize_speaker.txt");
}

namespace {

std::optional<std::string> toxic_label(const MessageRecord& turn, const LabelMap& labels,
                                       const std::set<std::string>& negative_labels) {
    auto it = labels.find(turn.id);
    if (it == labels.end() || negative_labels.count(it->second)) return std::nullopt;
    return it->second;
}

}  // namespace

std::vector<std::string> flagged_ids(std::span<const MessageRecord> turns, const LabelMap& labels,
                                     const std::set<std::string>& negative_labels) {
    std::vector<std::string> out;
    for (const auto& t : turns)
        if (toxic_label(t, labels, negative_labels)) out.push_back(t.id);
    return out;
}

std::string build_summary_prompt(std::span<const MessageRecord> turns, const LabelMap& labels,
                                 const std::string& instruction_template,
                                 const std::set<std::string>& negative_labels,
                                 const std::optional<std::string>& speaker) {
    for (const char* slot : {"{conversation}", "{toxic_messages}"})
        if (!contains(instruction_template, slot))
            fail(ErrorCode::MissingPlaceholder, std::string("template lacks ") + slot);

    std::string conversation, toxic;
    std::size_t n = 0;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const auto& t = turns[i];
        std::string line = speaker_prefix(t) + t.text;
        if (i) conversation.push_back('\n');
        conversation += line;
        if (auto label = toxic_label(t, labels, negative_labels)) {
            if (n) toxic.push_back('\n');
            toxic += std::to_string(++n) + ". [" + *label + "] " + line;
        }
    }
    std::map<std::string, std::string> bindings{{"conversation", conversation},
                                                {"toxic_messages", n ? toxic : "none"}};
    if (speaker) bindings["speaker"] = *speaker;
    return substitute(instruction_template, bindings);
}

ToxicAwareSummary summarize_chunk(const ConversationRecord& conversation, const Chunk& chunk,
                                  const LabelMap& labels, LmGateway& gateway,
                                  const std::string& provider_id, const SummaryParams& params,
                                  const std::function<bool()>& cancelled) {
    if (chunk.start > chunk.end || chunk.end >= conversation.turns.size())
        fail(ErrorCode::PreconditionViolation, "chunk outside the conversation");
    if (!gateway.provider(provider_id).has(Capability::Chat))
        fail(ErrorCode::CapabilityMissing, "provider '" + provider_id + "' cannot chat");

    std::span<const MessageRecord> turns(conversation.turns.data() + chunk.start,
                                         chunk.end - chunk.start + 1);
    ToxicAwareSummary out;
    out.conversation_key = conversation.key;
    out.chunk_id = chunk.chunk_id;
    out.flagged_refs = flagged_ids(turns, labels, params.negative_labels);

    std::set<std::string> speakers;
    for (const auto& t : turns) speakers.insert(speaker_of(t));
    for (const auto& speaker : speakers) {
        if (cancelled && cancelled()) fail(ErrorCode::Cancelled, "summarization cancelled");
        auto prompt = build_summary_prompt(turns, labels, params.instruction_template,
                                           params.negative_labels, speaker);
        try {
            out.per_speaker[speaker] =
                std::string(trim(gateway.chat(provider_id, {{"user", prompt}}, params.chat)));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::Cancelled || e.code() == ErrorCode::CapabilityMissing)
                throw;
            spdlog::warn("summary for {} in {}/{} failed: {}", speaker, conversation.key,
                         chunk.chunk_id, e.what());
            out.failed_speakers.push_back(speaker);
        }
    }
    return out;
}

ConversationSummary summarize_conversation(const ConversationRecord& conversation,
                                           const LabelMap& labels, LmGateway& gateway,
                                           const std::string& chat_provider,
                                           const std::string& embed_provider,
                                           const SummaryParams& params,
                                           const SummaryHooks& hooks) {
    auto is_cancelled = [&] { return hooks.cancelled && hooks.cancelled(); };
    if (is_cancelled()) fail(ErrorCode::Cancelled, "summarization cancelled");

    ConversationSummary result;
    result.conversation_key = conversation.key;
    result.chunks = chunk_conversation(conversation, gateway, embed_provider, params.chunker);
    result.groups = regroup_topics(result.chunks, params.chunker.merge_threshold);
    if (hooks.on_total) hooks.on_total(result.chunks.size());

    std::map<std::string, std::string> group_of;
    for (const auto& g : result.groups)
        for (const auto& c : g.member_chunk_ids) group_of[c] = g.group_id;

    std::vector<ToxicAwareSummary> summaries(result.chunks.size());
    std::atomic<std::size_t> completed{0};
    std::mutex progress_mutex;
    parallel_for(result.chunks.size(), params.parallelism, [&](std::size_t i) {
        if (is_cancelled()) fail(ErrorCode::Cancelled, "summarization cancelled");
        auto s = summarize_chunk(conversation, result.chunks[i], labels, gateway, chat_provider,
                                 params, hooks.cancelled);
        s.group_id = group_of[s.chunk_id];
        summaries[i] = std::move(s);
        // serialize reports so observers see 1, 2, 3 ... in order
        std::lock_guard lock(progress_mutex);
        auto done = ++completed;
        if (hooks.on_chunk_done) hooks.on_chunk_done(done);
    });

    bool all_failed = !summaries.empty();
    for (const auto& s : summaries) all_failed = all_failed && s.failed();
    if (all_failed)
        fail(ErrorCode::LmUnavailable,
             "every chunk of conversation '" + conversation.key + "' failed to summarize");
    result.summaries = std::move(summaries);
    return result;
}

json to_json(const ConversationSummary& summary) {
    std::map<std::string, const ToxicAwareSummary*> by_chunk;
    for (const auto& s : summary.summaries) by_chunk[s.chunk_id] = &s;

    json results = json::object(), flagged = json::object(), failed = json::object();
    for (const auto& g : summary.groups) {
        json group = json::object();
        for (const auto& c : g.member_chunk_ids) {
            auto it = by_chunk.find(c);
            if (it == by_chunk.end()) continue;
            group[c] = it->second->per_speaker;
            flagged[c] = it->second->flagged_refs;
            if (!it->second->failed_speakers.empty()) failed[c] = it->second->failed_speakers;
        }
        results[g.group_id] = std::move(group);
    }
    json out = chunk_plan_json(summary.chunks, summary.groups);
    out["conversation_key"] = summary.conversation_key;
    out["results"] = std::move(results);
    out["flagged"] = std::move(flagged);
    out["failed"] = std::move(failed);
    return out;
}

std::vector<std::string> speaker_summaries(const ConversationSummary& summary,
                                           const std::string& speaker) {
    std::vector<std::pair<std::size_t, std::string>> found;
    std::map<std::string, std::size_t> start_of;
    for (const auto& c : summary.chunks) start_of[c.chunk_id] = c.start;
    for (const auto& s : summary.summaries) {
        auto it = s.per_speaker.find(speaker);
        if (it != s.per_speaker.end()) found.emplace_back(start_of[s.chunk_id], it->second);
    }
    std::stable_sort(found.begin(), found.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::string> out;
    for (auto& f : found) out.push_back(std::move(f.second));
    return out;
}

}  // namespace toxiscope

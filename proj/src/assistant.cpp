#include "toxiscope/assistant.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <regex>

namespace toxiscope {

using nlohmann::json;

std::vector<std::string> placeholders(const std::string& body) {
    static const std::regex slot(R"(\{([A-Za-z_][A-Za-z0-9_]*)\})");
    std::vector<std::string> out;
    for (auto it = std::sregex_iterator(body.begin(), body.end(), slot);
         it != std::sregex_iterator(); ++it) {
        auto name = (*it)[1].str();
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    return out;
}

TemplateLibrary TemplateLibrary::load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        fail(ErrorCode::NotFound, "template directory " + dir.string() + " not found");
    TemplateLibrary lib;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            lib.add(entry.path().stem().string(), read_file(entry.path()));
    return lib;
}

TemplateLibrary TemplateLibrary::shipped() {
    return load(std::filesystem::path(TOXISCOPE_RESOURCE_DIR) / "templates");
}

void TemplateLibrary::add(const std::string& template_id, const std::string& body) {
    PromptTemplate t{template_id, body, {}};
    for (const auto& name : placeholders(body)) {
        if (count_occurrences(body, "{" + name + "}") != 1)
            fail(ErrorCode::ValidationError,
                 "template '" + template_id + "' uses {" + name + "} more than once");
        t.required_bindings.insert(name);
    }
    templates_[template_id] = std::move(t);
}

bool TemplateLibrary::has(const std::string& template_id) const {
    return templates_.count(template_id) > 0;
}

const PromptTemplate& TemplateLibrary::get(const std::string& template_id) const {
    auto it = templates_.find(template_id);
    if (it == templates_.end())
        fail(ErrorCode::UnknownTemplate, "unknown template '" + template_id + "'");
    return it->second;
}

std::vector<std::string> TemplateLibrary::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

std::string TemplateLibrary::render(const std::string& template_id,
                                    const std::map<std::string, std::string>& bindings) const {
    const auto& t = get(template_id);
    for (const auto& name : t.required_bindings)
        if (!bindings.count(name))
            fail(ErrorCode::MissingBinding,
                 "template '" + template_id + "' needs a binding for {" + name + "}");
    return substitute(t.body, bindings);
}

// ---------------------------------------------------------------------------

namespace {

std::string turn_line(const MessageRecord& m) {
    return (m.speaker ? *m.speaker + ": " : std::string()) + m.text;
}

json to_json(const LabelledTurn& t) {
    json j = {{"id", t.message.id}, {"text", t.message.text}, {"label", t.label}};
    if (t.message.conversation_key) j["conversation_id"] = *t.message.conversation_key;
    if (t.message.speaker) j["speaker"] = *t.message.speaker;
    if (t.message.turn_index) j["turn_index"] = *t.message.turn_index;
    return j;
}

LabelledTurn labelled_turn_from_json(const json& j) {
    LabelledTurn t;
    t.message.id = j.at("id").get<std::string>();
    t.message.text = j.at("text").get<std::string>();
    t.label = j.value("label", "");
    if (j.contains("conversation_id")) t.message.conversation_key = j["conversation_id"].get<std::string>();
    if (j.contains("speaker")) t.message.speaker = j["speaker"].get<std::string>();
    if (j.contains("turn_index")) t.message.turn_index = j["turn_index"].get<std::uint64_t>();
    return t;
}

json snapshot_json(const ChatSession& s) {
    json j = {{"session_id", s.session_id},
              {"transcript", transcript_json(s.transcript)},
              {"preamble_sent", s.preamble_sent}};
    if (s.context) {
        json turns = json::array();
        for (const auto& t : s.context->turns) turns.push_back(to_json(t));
        j["context"] = {{"turns", turns}};
        if (s.context->dataset_id) j["context"]["dataset_id"] = *s.context->dataset_id;
    }
    return j;
}

ChatSession session_from_snapshot(const json& j) {
    ChatSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.transcript = transcript_from_json(j.at("transcript"));
    s.preamble_sent = j.value("preamble_sent", false);
    if (j.contains("context")) {
        BoundContext ctx;
        if (j["context"].contains("dataset_id"))
            ctx.dataset_id = j["context"]["dataset_id"].get<std::string>();
        for (const auto& t : j["context"].at("turns")) ctx.turns.push_back(labelled_turn_from_json(t));
        s.context = std::move(ctx);
    }
    return s;
}

constexpr const char* kSnapshotKind = "assistant_session";

}  // namespace

std::string format_labels(const std::vector<LabelledTurn>& turns) {
    std::vector<std::string> lines;
    for (const auto& t : turns) {
        if (t.label.empty()) continue;
        lines.push_back(std::to_string(lines.size() + 1) + ". [" + t.label + "] " +
                        turn_line(t.message));
    }
    return join(lines, "\n");
}

std::string format_turns(const std::vector<LabelledTurn>& turns) {
    std::vector<std::string> lines;
    for (const auto& t : turns) lines.push_back(turn_line(t.message));
    return join(lines, "\n");
}

std::string label_preamble(const std::vector<LabelledTurn>& turns) {
    return "Based on the analysis of a classifier, the conversation below contains the "
           "following labelled messages. The details are as follows:\n\n" +
           format_labels(turns) + "\n\nConversation:\n\"\"\"" + format_turns(turns) + "\"\"\"";
}

json to_json(const TranscriptEntry& entry) {
    return {{"role", entry.role},
            {"text", entry.text},
            {"timestamp", entry.timestamp},
            {"failed", entry.failed}};
}

json transcript_json(const std::vector<TranscriptEntry>& transcript) {
    json out = json::array();
    for (const auto& e : transcript) out.push_back(to_json(e));
    return out;
}

std::vector<TranscriptEntry> transcript_from_json(const json& document) {
    if (!document.is_array()) fail(ErrorCode::ValidationError, "transcript must be a JSON array");
    std::vector<TranscriptEntry> out;
    for (const auto& j : document) {
        if (!j.is_object() || !j.contains("role") || !j.contains("text"))
            fail(ErrorCode::ValidationError, "transcript entries need role and text");
        auto role = j["role"].get<std::string>();
        if (role != "system" && role != "user" && role != "assistant")
            fail(ErrorCode::ValidationError, "unknown role '" + role + "'");
        out.push_back({role, j["text"].get<std::string>(), j.value("timestamp", ""),
                       j.value("failed", false)});
    }
    return out;
}

// ---------------------------------------------------------------------------

Assistant::Assistant(LmGateway& gateway, TemplateLibrary templates, Store* store,
                     AssistantOptions options)
    : gateway_(gateway), templates_(std::move(templates)), store_(store), options_(options) {
    if (options_.context_limit < 2)
        fail(ErrorCode::ValidationError, "context_limit must be at least 2");
    if (!store_) return;
    for (const auto& [id, value] : store_->list_state(kSnapshotKind)) {
        try {
            auto slot = std::make_shared<Slot>();
            slot->data = session_from_snapshot(json::parse(value));
            sessions_[id] = std::move(slot);
        } catch (const std::exception& e) {
            spdlog::warn("skipping unreadable session snapshot {}: {}", id, e.what());
        }
    }
}

std::string Assistant::add_session(ChatSession session) {
    std::string id;
    {
        std::lock_guard lock(sessions_mutex_);
        do {
            auto seed = std::to_string(++sequence_) + "/" +
                        std::to_string(std::chrono::steady_clock::now().time_since_epoch().count());
            id = "s-" + sha256_hex(seed).substr(0, 12);
        } while (sessions_.count(id));
        session.session_id = id;
        auto slot = std::make_shared<Slot>();
        slot->data = std::move(session);
        sessions_[id] = slot;
    }
    persist(this->session(id));
    return id;
}

std::string Assistant::create_session(std::optional<BoundContext> context) {
    ChatSession s;
    s.context = std::move(context);
    return add_session(std::move(s));
}

bool Assistant::has_session(const std::string& session_id) const {
    std::lock_guard lock(sessions_mutex_);
    return sessions_.count(session_id) > 0;
}

std::shared_ptr<Assistant::Slot> Assistant::slot(const std::string& session_id) const {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) fail(ErrorCode::NotFound, "unknown session '" + session_id + "'");
    return it->second;
}

ChatSession Assistant::session(const std::string& session_id) const {
    auto s = slot(session_id);
    std::lock_guard lock(s->data_mutex);
    return s->data;
}

std::vector<std::string> Assistant::session_ids() const {
    std::lock_guard lock(sessions_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
}

std::string Assistant::resolve_input(const std::string& session_id,
                                     const MessageInput& input) const {
    auto s = session(session_id);
    if (!input.template_id) {
        if (trim(input.text).empty()) fail(ErrorCode::ValidationError, "message is empty");
        return input.text;
    }
    auto bindings = input.bindings;
    if (s.context) {
        if (!bindings.count("conversation")) bindings["conversation"] = format_turns(s.context->turns);
        if (!bindings.count("labels")) bindings["labels"] = format_labels(s.context->turns);
    }
    return templates_.render(*input.template_id, bindings);
}

std::vector<ChatMessage> Assistant::context_of(const ChatSession& session) const {
    std::vector<const TranscriptEntry*> pinned, rest;
    for (const auto& e : session.transcript) {
        if (e.failed) continue;
        (e.role == "system" ? pinned : rest).push_back(&e);
    }
    std::size_t room = options_.context_limit > pinned.size() ? options_.context_limit - pinned.size() : 1;
    std::size_t skip = rest.size() > room ? rest.size() - room : 0;
    std::vector<ChatMessage> out;
    for (const auto* e : pinned) out.push_back({e->role, e->text});
    for (std::size_t i = skip; i < rest.size(); ++i) out.push_back({rest[i]->role, rest[i]->text});
    return out;
}

std::vector<ChatMessage> Assistant::lm_context(const std::string& session_id) const {
    return context_of(session(session_id));
}

std::string Assistant::send_message(const std::string& session_id, const MessageInput& input,
                                    const std::string& provider_id, const DeltaSink& sink,
                                    const ChatParams& params) {
    auto s = slot(session_id);
    std::lock_guard call(s->call_mutex);
    const std::string text = resolve_input(session_id, input);
    const auto& provider = gateway_.provider(provider_id);

    std::vector<ChatMessage> messages;
    {
        std::lock_guard lock(s->data_mutex);
        auto& data = s->data;
        if (data.context && !data.preamble_sent) {
            data.transcript.push_back({"system", label_preamble(data.context->turns), now_iso8601()});
            data.preamble_sent = true;
        }
        data.transcript.push_back({"user", text, now_iso8601()});
        messages = context_of(data);
    }

    auto record = [&](TranscriptEntry entry) {
        ChatSession copy;
        {
            std::lock_guard lock(s->data_mutex);
            s->data.transcript.push_back(std::move(entry));
            copy = s->data;
        }
        persist(copy);
    };

    try {
        std::string reply;
        if (provider.has(Capability::Stream)) {
            reply = gateway_.stream_chat(provider_id, messages, params, sink);
        } else {
            reply = gateway_.chat(provider_id, messages, params);
            if (sink) sink(reply);
        }
        record({"assistant", reply, now_iso8601()});
        return reply;
    } catch (const Error& e) {
        std::string note = e.code() == ErrorCode::StreamInterrupted && !e.partial().empty()
                               ? e.partial()
                               : std::string(to_string(e.code())) + ": " + e.what();
        record({"assistant", note, now_iso8601(), true});
        throw;
    }
}

std::string Assistant::export_text(const std::string& session_id) const {
    auto s = session(session_id);
    std::string out = "Session " + s.session_id + "\n";
    for (const auto& e : s.transcript) {
        out += "\n[" + e.timestamp + "] " + e.role + (e.failed ? " (failed)" : "") + ":\n";
        out += e.text + "\n";
    }
    return out;
}

json Assistant::export_json(const std::string& session_id) const {
    return transcript_json(session(session_id).transcript);
}

std::string Assistant::import_session(const json& document) {
    ChatSession s;
    s.transcript = transcript_from_json(document);
    s.preamble_sent = !s.transcript.empty() && s.transcript.front().role == "system";
    return add_session(std::move(s));
}

void Assistant::persist(const ChatSession& session) {
    if (!store_) return;
    try {
        store_->put_state(kSnapshotKind, session.session_id, snapshot_json(session).dump());
    } catch (const std::exception& e) {
        spdlog::warn("could not snapshot session {}: {}", session.session_id, e.what());
    }
}

}  // namespace toxiscope

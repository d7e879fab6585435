#pragma once

#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/store.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace toxiscope {

struct PromptTemplate {
    std::string template_id;
    std::string body;
    std::set<std::string> required_bindings;
};

/// {name} slots in `body`, in order of first appearance.
std::vector<std::string> placeholders(const std::string& body);

class TemplateLibrary {
public:
    /// Loads every *.txt in `dir`; the file stem is the template id.
    static TemplateLibrary load(const std::filesystem::path& dir);
    static TemplateLibrary shipped();

    /// ValidationError when a slot appears more than once.
    void add(const std::string& template_id, const std::string& body);
    bool has(const std::string& template_id) const;
    const PromptTemplate& get(const std::string& template_id) const;
    std::vector<std::string> ids() const;

    std::string render(const std::string& template_id,
                       const std::map<std::string, std::string>& bindings) const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

/// A labelled message bound into an assistant session.
struct LabelledTurn {
    MessageRecord message;
    std::string label;

    bool operator==(const LabelledTurn&) const = default;
};

/// "n. [label] speaker: text", one line per turn.
std::string format_labels(const std::vector<LabelledTurn>& turns);
/// Speaker-prefixed turns, newline-joined.
std::string format_turns(const std::vector<LabelledTurn>& turns);
std::string label_preamble(const std::vector<LabelledTurn>& turns);

struct TranscriptEntry {
    std::string role;  // system | user | assistant
    std::string text;
    std::string timestamp;
    bool failed = false;

    bool operator==(const TranscriptEntry&) const = default;
};

struct BoundContext {
    std::optional<std::string> dataset_id;
    std::vector<LabelledTurn> turns;

    bool operator==(const BoundContext&) const = default;
};

struct ChatSession {
    std::string session_id;
    std::optional<BoundContext> context;
    std::vector<TranscriptEntry> transcript;
    bool preamble_sent = false;
};

struct MessageInput {
    std::string text;
    std::optional<std::string> template_id;
    std::map<std::string, std::string> bindings;
};

struct AssistantOptions {
    std::size_t context_limit = 200;
};

class Assistant {
public:
    Assistant(LmGateway& gateway, TemplateLibrary templates, Store* store = nullptr,
              AssistantOptions options = {});

    std::string create_session(std::optional<BoundContext> context = std::nullopt);
    bool has_session(const std::string& session_id) const;
    ChatSession session(const std::string& session_id) const;
    std::vector<std::string> session_ids() const;

    /// Text that would be sent for `input`: either the free text or the
    /// rendered template. Missing {conversation}/{labels} bindings are taken
    /// from the bound context when there is one.
    std::string resolve_input(const std::string& session_id, const MessageInput& input) const;

    /// Streams the reply through `sink` and appends (user, assistant) to the
    /// transcript. On LM failure the assistant entry is recorded with
    /// failed=true and the error is rethrown.
    std::string send_message(const std::string& session_id, const MessageInput& input,
                             const std::string& provider_id, const DeltaSink& sink = {},
                             const ChatParams& params = {});

    /// Messages the LM would see next: the preamble (if sent) plus the newest
    /// non-failed entries, at most context_limit in total.
    std::vector<ChatMessage> lm_context(const std::string& session_id) const;

    std::string export_text(const std::string& session_id) const;
    nlohmann::json export_json(const std::string& session_id) const;
    /// Creates a new session holding the exported transcript.
    std::string import_session(const nlohmann::json& document);

    const TemplateLibrary& templates() const { return templates_; }

private:
    struct Slot {
        std::mutex call_mutex;  // one in-flight LM call
        mutable std::mutex data_mutex;
        ChatSession data;
    };

    std::shared_ptr<Slot> slot(const std::string& session_id) const;
    std::vector<ChatMessage> context_of(const ChatSession& session) const;
    void persist(const ChatSession& session);
    std::string add_session(ChatSession session);

    LmGateway& gateway_;
    TemplateLibrary templates_;
    Store* store_;
    AssistantOptions options_;
    mutable std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
    std::uint64_t sequence_ = 0;
};

nlohmann::json to_json(const TranscriptEntry& entry);
nlohmann::json transcript_json(const std::vector<TranscriptEntry>& transcript);
std::vector<TranscriptEntry> transcript_from_json(const nlohmann::json& document);

}  // namespace toxiscope

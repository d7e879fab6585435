#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

struct sqlite3;

namespace toxiscope {

enum class Layout { MessageLevel, ConversationLevel };
enum class Origin { BuiltinBenchmark, UserUpload };
enum class DataFormat { Csv, Jsonl };

std::string_view to_string(Layout layout);
std::string_view to_string(Origin origin);
DataFormat parse_format(std::string_view name);

/// Canonical record fields. Uploaded columns are mapped onto these.
namespace field {
inline constexpr std::string_view id = "id";
inline constexpr std::string_view text = "text";
inline constexpr std::string_view conversation_id = "conversation_id";
inline constexpr std::string_view speaker = "speaker";
inline constexpr std::string_view turn_index = "turn_index";
inline constexpr std::string_view label = "label";
}  // namespace field

/// Canonical field -> accepted column names (lowercase), in priority order.
struct ColumnSynonyms {
    std::map<std::string, std::vector<std::string>> by_field;

    static ColumnSynonyms defaults();
    /// INI file with one `field = name, name, ...` line per canonical field
    /// under a [columns] section. Fields not listed keep their defaults.
    static ColumnSynonyms load(const std::filesystem::path& path);
};

struct DatasetLayout {
    Layout layout = Layout::MessageLevel;
    /// Source column (as written in the header) -> canonical field.
    std::map<std::string, std::string> column_map;
};

DatasetLayout infer_layout(const std::vector<std::string>& header,
                           const ColumnSynonyms& synonyms = ColumnSynonyms::defaults());

struct MessageRecord {
    std::string id;
    std::string text;
    std::optional<std::string> conversation_key;
    std::optional<std::string> speaker;
    std::optional<std::uint64_t> turn_index;
    std::optional<std::string> gold_label;

    bool operator==(const MessageRecord&) const = default;
};

struct ConversationRecord {
    std::string key;
    std::vector<MessageRecord> turns;
    std::set<std::string> participants;
};

/// Speaker name used for turns that carry none.
inline constexpr std::string_view kUnknownSpeaker = "unknown";
std::string speaker_of(const MessageRecord& record);

/// Builds a conversation from loose turns: stable sort by turn_index,
/// participants collected from speakers.
ConversationRecord make_conversation(std::string key, std::vector<MessageRecord> turns);

struct DatasetDescriptor {
    std::string dataset_id;
    std::string name;
    Layout layout = Layout::MessageLevel;
    std::map<std::string, std::string> column_map;
    std::size_t record_count = 0;
    Origin origin = Origin::UserUpload;
};

struct IngestReport {
    DatasetDescriptor descriptor;
    std::size_t rows_read = 0;
    std::size_t dropped_empty = 0;
};

/// Parses raw bytes into canonical records without persisting anything.
struct ParsedDataset {
    DatasetLayout layout;
    std::vector<MessageRecord> records;
    std::size_t rows_read = 0;
    std::size_t dropped_empty = 0;
};
ParsedDataset parse_dataset(std::string_view raw, DataFormat format,
                            const ColumnSynonyms& synonyms = ColumnSynonyms::defaults());

std::string export_records(const std::vector<MessageRecord>& records, Layout layout,
                           DataFormat format);

/// Single-file embedded dataset and result store. Reads are served from an
/// in-memory snapshot; writes go through to SQLite.
class Store {
public:
    explicit Store(const std::string& path = ":memory:",
                   ColumnSynonyms synonyms = ColumnSynonyms::defaults());
    ~Store();
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    IngestReport ingest_dataset(const std::string& name, std::string_view raw,
                                DataFormat format);
    /// Registers a benchmark file supplied at deploy time. Idempotent per name.
    DatasetDescriptor register_builtin(const std::string& name,
                                       const std::filesystem::path& path, DataFormat format);

    bool exists(const std::string& dataset_id) const;
    DatasetDescriptor describe(const std::string& dataset_id) const;
    std::vector<DatasetDescriptor> list() const;
    std::vector<MessageRecord> records(const std::string& dataset_id) const;
    std::vector<std::string> conversation_keys(const std::string& dataset_id) const;
    ConversationRecord get_conversation(const std::string& dataset_id,
                                        const std::string& conversation_key) const;
    void delete_dataset(const std::string& dataset_id);
    std::string export_dataset(const std::string& dataset_id, DataFormat format) const;

    /// Derived results, keyed by (dataset, kind, key). Removed with the dataset.
    void put_result(const std::string& dataset_id, const std::string& kind,
                    const std::string& key, const std::string& value);
    std::optional<std::string> get_result(const std::string& dataset_id, const std::string& kind,
                                          const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> list_results(
        const std::string& dataset_id, const std::string& kind) const;

    /// Entries that belong to no dataset (e.g. assistant session snapshots).
    void put_state(const std::string& kind, const std::string& key, const std::string& value);
    std::optional<std::string> get_state(const std::string& kind, const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> list_state(const std::string& kind) const;

    const ColumnSynonyms& synonyms() const { return synonyms_; }

private:
    struct Dataset {
        DatasetDescriptor descriptor;
        std::vector<MessageRecord> records;
    };

    std::shared_ptr<const Dataset> find(const std::string& dataset_id) const;
    DatasetDescriptor insert(const std::string& id, const std::string& name, Origin origin,
                             ParsedDataset parsed);
    std::mutex& write_lock(const std::string& dataset_id);
    void exec(const std::string& sql);
    void load_all();

    ColumnSynonyms synonyms_;
    sqlite3* db_ = nullptr;
    mutable std::mutex db_mutex_;
    mutable std::shared_mutex datasets_mutex_;
    std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
    std::mutex locks_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> write_locks_;
    std::uint64_t sequence_ = 0;
};

}  // namespace toxiscope

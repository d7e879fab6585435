#include "toxiscope/store.hpp"

#include "toxiscope/csv.hpp"
#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include "json.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <sqlite3.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <unordered_map>
#include <unordered_set>

namespace toxiscope {

using nlohmann::json;

std::string_view to_string(Layout layout) {
    return layout == Layout::ConversationLevel ? "conversation-level" : "message-level";
}

std::string_view to_string(Origin origin) {
    return origin == Origin::BuiltinBenchmark ? "builtin-benchmark" : "user-upload";
}

DataFormat parse_format(std::string_view name) {
    auto lower = to_lower(trim(name));
    if (lower == "csv") return DataFormat::Csv;
    if (lower == "jsonl" || lower == "ndjson") return DataFormat::Jsonl;
    fail(ErrorCode::ValidationError, "unknown dataset format '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Column mapping

ColumnSynonyms ColumnSynonyms::defaults() {
    ColumnSynonyms s;
    s.by_field = {
        {std::string(field::id), {"id", "message_id", "msg_id"}},
        {std::string(field::text), {"text", "message", "content"}},
        {std::string(field::conversation_id), {"conversation_id", "conv_id", "dialogue_id"}},
        {std::string(field::speaker), {"speaker", "sender", "user"}},
        {std::string(field::turn_index), {"turn_index", "turn"}},
        {std::string(field::label), {"label", "gold", "class"}},
    };
    return s;
}

ColumnSynonyms ColumnSynonyms::load(const std::filesystem::path& path) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        fail(ErrorCode::ValidationError, std::string("column mapping: ") + e.what());
    }
    auto s = defaults();
    auto section = tree.get_child_optional("columns");
    if (!section) return s;
    for (const auto& [key, value] : *section) {
        if (!s.by_field.count(key))
            fail(ErrorCode::ValidationError, "column mapping: unknown canonical field '" + key + "'");
        std::vector<std::string> names;
        for (const auto& part : split(value.get_value<std::string>(), ','))
            if (auto t = trim(part); !t.empty()) names.push_back(to_lower(t));
        s.by_field[key] = std::move(names);
    }
    return s;
}

DatasetLayout infer_layout(const std::vector<std::string>& header,
                           const ColumnSynonyms& synonyms) {
    if (header.empty()) fail(ErrorCode::ValidationError, "empty header");
    std::map<std::string, std::string> lowered;  // lowercase -> original
    for (const auto& col : header) {
        auto key = to_lower(trim(col));
        if (!lowered.emplace(key, col).second)
            fail(ErrorCode::ValidationError, "duplicate column '" + col + "'");
    }

    DatasetLayout out;
    auto pick = [&](std::string_view canonical) -> bool {
        auto it = synonyms.by_field.find(std::string(canonical));
        if (it == synonyms.by_field.end()) return false;
        // Priority follows the synonym list, never the header order.
        for (const auto& name : it->second) {
            if (auto col = lowered.find(name); col != lowered.end()) {
                out.column_map[col->second] = std::string(canonical);
                return true;
            }
        }
        return false;
    };

    if (!pick(field::text)) fail(ErrorCode::NoTextColumn, "no recognizable text column");
    pick(field::id);
    pick(field::label);
    bool has_conv = pick(field::conversation_id);
    bool has_speaker = pick(field::speaker);
    if (has_conv && has_speaker) {
        out.layout = Layout::ConversationLevel;
        pick(field::turn_index);
    } else {
        out.layout = Layout::MessageLevel;
        // Conversation fields are meaningless without the pair.
        for (auto it = out.column_map.begin(); it != out.column_map.end();) {
            if (it->second == field::conversation_id)
                it = out.column_map.erase(it);
            else
                ++it;
        }
    }
    return out;
}

std::string speaker_of(const MessageRecord& record) {
    return record.speaker.value_or(std::string(kUnknownSpeaker));
}

ConversationRecord make_conversation(std::string key, std::vector<MessageRecord> turns) {
    std::stable_sort(turns.begin(), turns.end(), [](const auto& a, const auto& b) {
        return a.turn_index.value_or(0) < b.turn_index.value_or(0);
    });
    ConversationRecord conv;
    conv.key = std::move(key);
    for (const auto& t : turns) conv.participants.insert(speaker_of(t));
    conv.turns = std::move(turns);
    return conv;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

using Row = std::map<std::string, std::string>;  // canonical field -> cell

struct RawRow {
    std::map<std::string, std::string> cells;  // source column -> cell
    std::size_t row = 0;
};

std::optional<std::string> non_empty(const Row& row, std::string_view key) {
    auto it = row.find(std::string(key));
    if (it == row.end() || it->second.empty()) return std::nullopt;
    return it->second;
}

[[noreturn]] void row_error(std::size_t row, const std::string& what) {
    throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + ": " + what).with_row(row);
}

ParsedDataset build_records(const std::vector<std::string>& header,
                            const std::vector<RawRow>& rows, const ColumnSynonyms& synonyms) {
    ParsedDataset out;
    out.layout = infer_layout(header, synonyms);
    const bool conversational = out.layout.layout == Layout::ConversationLevel;
    const bool has_turn_column = std::any_of(
        out.layout.column_map.begin(), out.layout.column_map.end(),
        [](const auto& kv) { return kv.second == field::turn_index; });

    std::unordered_set<std::string> seen_ids;
    std::unordered_map<std::string, std::uint64_t> file_order;  // per conversation
    std::size_t ordinal = 0;
    for (const auto& raw : rows) {
        ++ordinal;
        ++out.rows_read;
        Row row;
        for (const auto& [col, canonical] : out.layout.column_map) {
            auto it = raw.cells.find(col);
            row[canonical] = it == raw.cells.end() ? std::string() : it->second;
        }
        const std::string text = row[std::string(field::text)];
        if (trim(text).empty()) {
            ++out.dropped_empty;
            continue;
        }
        MessageRecord rec;
        rec.text = text;
        rec.id = non_empty(row, field::id).value_or("r" + std::to_string(ordinal));
        if (!seen_ids.insert(rec.id).second) row_error(raw.row, "duplicate id '" + rec.id + "'");
        rec.gold_label = non_empty(row, field::label);
        rec.speaker = non_empty(row, field::speaker);
        if (conversational) {
            rec.conversation_key = non_empty(row, field::conversation_id);
            if (!rec.conversation_key) row_error(raw.row, "missing conversation key");
            auto position = file_order[*rec.conversation_key]++;
            if (auto cell = has_turn_column ? non_empty(row, field::turn_index) : std::nullopt) {
                std::uint64_t value = 0;
                auto t = trim(*cell);
                auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
                if (ec != std::errc() || ptr != t.data() + t.size())
                    row_error(raw.row, "turn_index '" + *cell + "' is not a non-negative integer");
                rec.turn_index = value;
            } else {
                rec.turn_index = position;
            }
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

std::string json_cell(const json& v) {
    if (v.is_null()) return {};
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
    return v.dump();
}

json record_to_json(const MessageRecord& r) {
    json j = {{"id", r.id}, {"text", r.text}};
    if (r.conversation_key) j["conversation_id"] = *r.conversation_key;
    if (r.speaker) j["speaker"] = *r.speaker;
    if (r.turn_index) j["turn_index"] = *r.turn_index;
    if (r.gold_label) j["label"] = *r.gold_label;
    return j;
}

MessageRecord record_from_json(const json& j) {
    MessageRecord r;
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    if (j.contains("conversation_id")) r.conversation_key = j["conversation_id"].get<std::string>();
    if (j.contains("speaker")) r.speaker = j["speaker"].get<std::string>();
    if (j.contains("turn_index")) r.turn_index = j["turn_index"].get<std::uint64_t>();
    if (j.contains("label")) r.gold_label = j["label"].get<std::string>();
    return r;
}

json descriptor_to_json(const DatasetDescriptor& d) {
    return {{"dataset_id", d.dataset_id},         {"name", d.name},
            {"layout", std::string(to_string(d.layout))}, {"column_map", d.column_map},
            {"record_count", d.record_count},     {"origin", std::string(to_string(d.origin))}};
}

DatasetDescriptor descriptor_from_json(const json& j) {
    DatasetDescriptor d;
    d.dataset_id = j.at("dataset_id").get<std::string>();
    d.name = j.at("name").get<std::string>();
    d.layout = j.at("layout").get<std::string>() == "conversation-level" ? Layout::ConversationLevel
                                                                         : Layout::MessageLevel;
    d.column_map = j.at("column_map").get<std::map<std::string, std::string>>();
    d.record_count = j.at("record_count").get<std::size_t>();
    d.origin = j.at("origin").get<std::string>() == "builtin-benchmark" ? Origin::BuiltinBenchmark
                                                                        : Origin::UserUpload;
    return d;
}

}  // namespace

ParsedDataset parse_dataset(std::string_view raw, DataFormat format,
                            const ColumnSynonyms& synonyms) {
    std::vector<std::string> header;
    std::vector<RawRow> rows;
    if (format == DataFormat::Csv) {
        auto records = csv::parse(raw);
        if (records.empty()) fail(ErrorCode::ParseError, "csv input has no header");
        header = records.front().fields;
        for (std::size_t i = 1; i < records.size(); ++i) {
            const auto& rec = records[i];
            if (rec.fields.size() != header.size())
                row_error(rec.row, "expected " + std::to_string(header.size()) + " fields, got " +
                                       std::to_string(rec.fields.size()));
            RawRow row{{}, rec.row};
            for (std::size_t c = 0; c < header.size(); ++c) row.cells[header[c]] = rec.fields[c];
            rows.push_back(std::move(row));
        }
    } else {
        std::unordered_set<std::string> known;
        std::size_t line_no = 0;
        for (const auto& line : split(raw, '\n')) {
            ++line_no;
            if (trim(line).empty()) continue;
            json obj;
            try {
                obj = json::parse(line);
            } catch (const json::parse_error& e) {
                row_error(line_no, std::string("invalid json: ") + e.what());
            }
            if (!obj.is_object()) row_error(line_no, "expected a json object");
            RawRow row{{}, line_no};
            for (const auto& [key, value] : obj.items()) {
                if (known.insert(key).second) header.push_back(key);
                row.cells[key] = json_cell(value);
            }
            rows.push_back(std::move(row));
        }
        if (header.empty()) fail(ErrorCode::ParseError, "jsonl input has no records");
    }
    return build_records(header, rows, synonyms);
}

std::string export_records(const std::vector<MessageRecord>& records, Layout layout,
                           DataFormat format) {
    if (format == DataFormat::Jsonl) {
        std::string out;
        for (const auto& r : records) out += record_to_json(r).dump() + "\n";
        return out;
    }
    std::vector<std::string> header = {"id", "text"};
    if (layout == Layout::ConversationLevel) {
        header.insert(header.end(), {"conversation_id", "speaker", "turn_index"});
    } else if (std::any_of(records.begin(), records.end(), [](auto& r) { return r.speaker; })) {
        header.emplace_back("speaker");
    }
    header.emplace_back("label");
    std::string out = csv::format_row(header);
    for (const auto& r : records) {
        std::vector<std::string> row;
        for (const auto& col : header) {
            if (col == "id") row.push_back(r.id);
            else if (col == "text") row.push_back(r.text);
            else if (col == "conversation_id") row.push_back(r.conversation_key.value_or(""));
            else if (col == "speaker") row.push_back(r.speaker.value_or(""));
            else if (col == "turn_index")
                row.push_back(r.turn_index ? std::to_string(*r.turn_index) : "");
            else row.push_back(r.gold_label.value_or(""));
        }
        out += csv::format_row(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Store

namespace {

struct Statement {
    sqlite3_stmt* stmt = nullptr;
    Statement(sqlite3* db, const char* sql) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt, nullptr) != SQLITE_OK)
            fail(ErrorCode::PreconditionViolation, std::string("sqlite: ") + sqlite3_errmsg(db));
    }
    ~Statement() { sqlite3_finalize(stmt); }
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;

    void bind(int idx, const std::string& value) {
        sqlite3_bind_text(stmt, idx, value.data(), static_cast<int>(value.size()), SQLITE_TRANSIENT);
    }
    bool step() {
        int rc = sqlite3_step(stmt);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        fail(ErrorCode::PreconditionViolation,
             std::string("sqlite: ") + sqlite3_errmsg(sqlite3_db_handle(stmt)));
    }
    std::string text(int col) const {
        auto p = reinterpret_cast<const char*>(sqlite3_column_text(stmt, col));
        return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt, col)))
                 : std::string();
    }
};

}  // namespace

Store::Store(const std::string& path, ColumnSynonyms synonyms)
    : synonyms_(std::move(synonyms)) {
    if (sqlite3_open(path.c_str(), &db_) != SQLITE_OK) {
        std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        fail(ErrorCode::PreconditionViolation, "cannot open store '" + path + "': " + msg);
    }
    exec("PRAGMA foreign_keys = ON");
    exec("CREATE TABLE IF NOT EXISTS datasets (id TEXT PRIMARY KEY, descriptor TEXT NOT NULL)");
    exec(
        "CREATE TABLE IF NOT EXISTS records (dataset_id TEXT NOT NULL, ordinal INTEGER NOT NULL,"
        " body TEXT NOT NULL, PRIMARY KEY (dataset_id, ordinal))");
    exec(
        "CREATE TABLE IF NOT EXISTS results (dataset_id TEXT NOT NULL, kind TEXT NOT NULL,"
        " key TEXT NOT NULL, value TEXT NOT NULL, PRIMARY KEY (dataset_id, kind, key))");
    load_all();
}

Store::~Store() { sqlite3_close(db_); }

void Store::exec(const std::string& sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown";
        sqlite3_free(err);
        fail(ErrorCode::PreconditionViolation, "sqlite: " + msg);
    }
}

void Store::load_all() {
    std::lock_guard db_lock(db_mutex_);
    Statement ds(db_, "SELECT id, descriptor FROM datasets");
    while (ds.step()) {
        auto data = std::make_shared<Dataset>();
        data->descriptor = descriptor_from_json(json::parse(ds.text(1)));
        Statement rs(db_, "SELECT body FROM records WHERE dataset_id = ? ORDER BY ordinal");
        rs.bind(1, ds.text(0));
        while (rs.step()) data->records.push_back(record_from_json(json::parse(rs.text(0))));
        datasets_[ds.text(0)] = std::move(data);
    }
}

std::shared_ptr<const Store::Dataset> Store::find(const std::string& dataset_id) const {
    std::shared_lock lock(datasets_mutex_);
    auto it = datasets_.find(dataset_id);
    if (it == datasets_.end()) fail(ErrorCode::NotFound, "dataset '" + dataset_id + "' not found");
    return it->second;
}

std::mutex& Store::write_lock(const std::string& dataset_id) {
    std::lock_guard lock(locks_mutex_);
    auto& slot = write_locks_[dataset_id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

DatasetDescriptor Store::insert(const std::string& id, const std::string& name, Origin origin,
                                ParsedDataset parsed) {
    auto data = std::make_shared<Dataset>();
    data->descriptor.dataset_id = id;
    data->descriptor.name = name;
    data->descriptor.layout = parsed.layout.layout;
    data->descriptor.column_map = parsed.layout.column_map;
    data->descriptor.record_count = parsed.records.size();
    data->descriptor.origin = origin;
    data->records = std::move(parsed.records);

    std::lock_guard dataset_lock(write_lock(id));
    {
        std::lock_guard db_lock(db_mutex_);
        exec("BEGIN");
        try {
            Statement ins(db_, "INSERT OR REPLACE INTO datasets (id, descriptor) VALUES (?, ?)");
            ins.bind(1, id);
            ins.bind(2, descriptor_to_json(data->descriptor).dump());
            ins.step();
            Statement del(db_, "DELETE FROM records WHERE dataset_id = ?");
            del.bind(1, id);
            del.step();
            for (std::size_t i = 0; i < data->records.size(); ++i) {
                Statement rec(db_,
                              "INSERT INTO records (dataset_id, ordinal, body) VALUES (?, ?, ?)");
                rec.bind(1, id);
                rec.bind(2, std::to_string(i));
                rec.bind(3, record_to_json(data->records[i]).dump());
                rec.step();
            }
            exec("COMMIT");
        } catch (...) {
            exec("ROLLBACK");
            throw;
        }
    }
    std::unique_lock lock(datasets_mutex_);
    datasets_[id] = data;
    return data->descriptor;
}

IngestReport Store::ingest_dataset(const std::string& name, std::string_view raw,
                                   DataFormat format) {
    auto parsed = parse_dataset(raw, format, synonyms_);
    IngestReport report;
    report.rows_read = parsed.rows_read;
    report.dropped_empty = parsed.dropped_empty;
    std::string id;
    {
        std::unique_lock lock(datasets_mutex_);
        auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        do {
            id = "ds-" + sha256_hex(name + "\x1f" + std::string(raw) + "\x1f" +
                                    std::to_string(++sequence_) + "\x1f" + std::to_string(stamp))
                             .substr(0, 12);
        } while (datasets_.count(id));
    }
    report.descriptor = insert(id, name, Origin::UserUpload, std::move(parsed));
    return report;
}

DatasetDescriptor Store::register_builtin(const std::string& name,
                                          const std::filesystem::path& path, DataFormat format) {
    std::string id = "builtin-" + to_lower(name);
    {
        std::shared_lock lock(datasets_mutex_);
        if (auto it = datasets_.find(id); it != datasets_.end()) return it->second->descriptor;
    }
    return insert(id, name, Origin::BuiltinBenchmark,
                  parse_dataset(read_file(path), format, synonyms_));
}

bool Store::exists(const std::string& dataset_id) const {
    std::shared_lock lock(datasets_mutex_);
    return datasets_.count(dataset_id) > 0;
}

DatasetDescriptor Store::describe(const std::string& dataset_id) const {
    return find(dataset_id)->descriptor;
}

std::vector<DatasetDescriptor> Store::list() const {
    std::shared_lock lock(datasets_mutex_);
    std::vector<DatasetDescriptor> out;
    for (const auto& [id, data] : datasets_) out.push_back(data->descriptor);
    return out;
}

std::vector<MessageRecord> Store::records(const std::string& dataset_id) const {
    return find(dataset_id)->records;
}

std::vector<std::string> Store::conversation_keys(const std::string& dataset_id) const {
    auto data = find(dataset_id);
    if (data->descriptor.layout != Layout::ConversationLevel)
        fail(ErrorCode::WrongLayout, "dataset '" + dataset_id + "' is message-level");
    std::vector<std::string> keys;
    std::unordered_set<std::string> seen;
    for (const auto& r : data->records)
        if (seen.insert(*r.conversation_key).second) keys.push_back(*r.conversation_key);
    return keys;
}

ConversationRecord Store::get_conversation(const std::string& dataset_id,
                                           const std::string& conversation_key) const {
    auto data = find(dataset_id);
    if (data->descriptor.layout != Layout::ConversationLevel)
        fail(ErrorCode::WrongLayout, "dataset '" + dataset_id + "' is message-level");
    std::vector<MessageRecord> turns;
    for (const auto& r : data->records)
        if (r.conversation_key == conversation_key) turns.push_back(r);
    if (turns.empty())
        fail(ErrorCode::NotFound, "conversation '" + conversation_key + "' not found");
    return make_conversation(conversation_key, std::move(turns));
}

void Store::delete_dataset(const std::string& dataset_id) {
    auto data = find(dataset_id);
    if (data->descriptor.origin == Origin::BuiltinBenchmark)
        fail(ErrorCode::BuiltinProtected, "builtin benchmark '" + dataset_id + "' cannot be deleted");
    std::lock_guard dataset_lock(write_lock(dataset_id));
    {
        std::lock_guard db_lock(db_mutex_);
        for (const char* sql : {"DELETE FROM results WHERE dataset_id = ?",
                                "DELETE FROM records WHERE dataset_id = ?",
                                "DELETE FROM datasets WHERE id = ?"}) {
            Statement st(db_, sql);
            st.bind(1, dataset_id);
            st.step();
        }
    }
    std::unique_lock lock(datasets_mutex_);
    datasets_.erase(dataset_id);
}

std::string Store::export_dataset(const std::string& dataset_id, DataFormat format) const {
    auto data = find(dataset_id);
    return export_records(data->records, data->descriptor.layout, format);
}

void Store::put_result(const std::string& dataset_id, const std::string& kind,
                       const std::string& key, const std::string& value) {
    find(dataset_id);
    std::lock_guard dataset_lock(write_lock(dataset_id));
    std::lock_guard db_lock(db_mutex_);
    Statement st(db_,
                 "INSERT OR REPLACE INTO results (dataset_id, kind, key, value) VALUES (?, ?, ?, ?)");
    st.bind(1, dataset_id);
    st.bind(2, kind);
    st.bind(3, key);
    st.bind(4, value);
    st.step();
}

std::optional<std::string> Store::get_result(const std::string& dataset_id,
                                             const std::string& kind,
                                             const std::string& key) const {
    std::lock_guard db_lock(db_mutex_);
    Statement st(db_, "SELECT value FROM results WHERE dataset_id = ? AND kind = ? AND key = ?");
    st.bind(1, dataset_id);
    st.bind(2, kind);
    st.bind(3, key);
    if (st.step()) return st.text(0);
    return std::nullopt;
}

std::vector<std::pair<std::string, std::string>> Store::list_results(
    const std::string& dataset_id, const std::string& kind) const {
    std::lock_guard db_lock(db_mutex_);
    Statement st(db_, "SELECT key, value FROM results WHERE dataset_id = ? AND kind = ? ORDER BY key");
    st.bind(1, dataset_id);
    st.bind(2, kind);
    std::vector<std::pair<std::string, std::string>> out;
    while (st.step()) out.emplace_back(st.text(0), st.text(1));
    return out;
}

void Store::put_state(const std::string& kind, const std::string& key,
                      const std::string& value) {
    std::lock_guard db_lock(db_mutex_);
    Statement st(db_,
                 "INSERT OR REPLACE INTO results (dataset_id, kind, key, value) VALUES ('', ?, ?, ?)");
    st.bind(1, kind);
    st.bind(2, key);
    st.bind(3, value);
    st.step();
}

std::optional<std::string> Store::get_state(const std::string& kind,
                                            const std::string& key) const {
    return get_result("", kind, key);
}

std::vector<std::pair<std::string, std::string>> Store::list_state(const std::string& kind) const {
    return list_results("", kind);
}

}  // namespace toxiscope

#include "toxiscope/service.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/persona.hpp"
#include "toxiscope/ppl_gain.hpp"
#include "toxiscope/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace toxiscope {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxBoundRows = 500;

std::string required_string(const json& params, const std::string& key) {
    if (!params.is_object() || !params.contains(key) || !params[key].is_string() ||
        params[key].get<std::string>().empty())
        fail(ErrorCode::ValidationError, "'" + key + "' must be a non-empty string");
    return params[key].get<std::string>();
}

std::string optional_string(const json& params, const std::string& key,
                            const std::string& fallback = {}) {
    if (!params.is_object() || !params.contains(key) || params[key].is_null()) return fallback;
    if (!params[key].is_string()) fail(ErrorCode::ValidationError, "'" + key + "' must be a string");
    return params[key].get<std::string>();
}

template <typename T>
T optional_number(const json& params, const std::string& key, T fallback) {
    if (!params.is_object() || !params.contains(key) || params[key].is_null()) return fallback;
    if (!params[key].is_number()) fail(ErrorCode::ValidationError, "'" + key + "' must be a number");
    return params[key].get<T>();
}

json descriptor_json(const DatasetDescriptor& d) {
    return {{"dataset_id", d.dataset_id},
            {"name", d.name},
            {"layout", std::string(to_string(d.layout))},
            {"column_map", d.column_map},
            {"record_count", d.record_count},
            {"origin", std::string(to_string(d.origin))}};
}

json record_json(const MessageRecord& r) {
    json j = {{"id", r.id}, {"text", r.text}};
    if (r.conversation_key) j["conversation_id"] = *r.conversation_key;
    if (r.speaker) j["speaker"] = *r.speaker;
    if (r.turn_index) j["turn_index"] = *r.turn_index;
    if (r.gold_label) j["label"] = *r.gold_label;
    return j;
}

MessageRecord record_from_json(const json& j, std::size_t ordinal) {
    MessageRecord r;
    if (j.is_string()) {
        r.id = "m" + std::to_string(ordinal);
        r.text = j.get<std::string>();
        return r;
    }
    if (!j.is_object()) fail(ErrorCode::ValidationError, "messages must be strings or objects");
    r.id = optional_string(j, "id", "m" + std::to_string(ordinal));
    r.text = required_string(j, "text");
    if (auto s = optional_string(j, "speaker"); !s.empty()) r.speaker = s;
    if (auto c = optional_string(j, "conversation_id"); !c.empty()) r.conversation_key = c;
    if (j.contains("turn_index") && j["turn_index"].is_number_unsigned())
        r.turn_index = j["turn_index"].get<std::uint64_t>();
    if (auto l = optional_string(j, "label"); !l.empty()) r.gold_label = l;
    return r;
}

ConversationRecord conversation_json_to_record(const json& turns) {
    if (!turns.is_array() || turns.empty())
        fail(ErrorCode::ValidationError, "'conversation' must be a non-empty array of turns");
    std::vector<MessageRecord> records;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        auto r = record_from_json(turns[i], i + 1);
        if (!r.turn_index) r.turn_index = i;
        records.push_back(std::move(r));
    }
    return make_conversation("inline", std::move(records));
}

void check_cancelled(JobContext* ctx) {
    if (ctx && ctx->cancelled()) fail(ErrorCode::Cancelled, "job cancelled");
}

// Summaries of `speaker` from stored conversation summaries, ordered by
// conversation then chunk start.
std::vector<std::string> summaries_for(const json& stored, const std::string& speaker) {
    std::vector<std::string> out;
    for (const auto& conv : stored) {
        std::map<std::string, std::size_t> start_of;
        for (const auto& c : conv.at("chunks")) start_of[c.at("id").get<std::string>()] = c.at("start");
        std::vector<std::pair<std::size_t, std::string>> found;
        for (const auto& [group, chunks] : conv.at("results").items())
            for (const auto& [chunk, speakers] : chunks.items())
                if (speakers.contains(speaker))
                    found.emplace_back(start_of[chunk], speakers[speaker].get<std::string>());
        std::stable_sort(found.begin(), found.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto& f : found) out.push_back(std::move(f.second));
    }
    return out;
}

}  // namespace

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotFound:
        case ErrorCode::UnknownTemplate: return 404;
        case ErrorCode::BuiltinProtected:
        case ErrorCode::AlreadyTerminal:
        case ErrorCode::WrongLayout:
        case ErrorCode::Cancelled: return 409;
        case ErrorCode::ContextTooLong: return 413;
        case ErrorCode::LogprobsUnsupported:
        case ErrorCode::CapabilityMissing: return 422;
        case ErrorCode::QueueFull: return 429;
        case ErrorCode::BackendUnavailable:
        case ErrorCode::LmUnavailable:
        case ErrorCode::StreamInterrupted:
        case ErrorCode::InvalidResponse:
        case ErrorCode::UnparseableVerdict:
        case ErrorCode::ParseFailure: return 502;
        default: return 400;
    }
}

json error_json(const std::exception& e) {
    json err = {{"code", "Internal"}, {"message", e.what()}};
    if (auto* te = dynamic_cast<const Error*>(&e)) {
        err["code"] = std::string(to_string(te->code()));
        if (te->row()) err["row"] = *te->row();
        if (!te->partial().empty()) err["partial"] = te->partial();
    } else if (dynamic_cast<const json::exception*>(&e)) {
        err["code"] = "ValidationError";
    }
    return {{"error", err}};
}

// ---------------------------------------------------------------------------

Service::Service(AppConfig config) : config_(std::move(config)) {
    auto synonyms = config_.columns_file ? ColumnSynonyms::load(*config_.columns_file)
                                         : ColumnSynonyms::defaults();
    store_ = std::make_unique<Store>(config_.store_path, synonyms);

    if (config_.schemas_file)
        for (auto& s : load_schemas(*config_.schemas_file)) schemas_.add(std::move(s));
    for (const auto& p : config_.providers) gateway_.add_provider(p);
    for (const auto& c : config_.classifiers) {
        for (const auto& s : c.schema_ids)
            if (!schemas_.contains(s))
                fail(ErrorCode::ValidationError,
                     "classifier '" + c.classifier_id + "' names unknown schema '" + s + "'");
        if (c.type == "http")
            classifiers_.add(std::make_shared<HttpClassifier>(c.classifier_id, c.url, c.schema_ids,
                                                              c.timeout_seconds));
        else
            classifiers_.add(std::make_shared<StubClassifier>(c.classifier_id, c.schema_ids));
    }
    for (const auto& e : config_.ensembles) classifiers_.add_ensemble(e);
    for (const auto& b : config_.benchmarks) {
        try {
            store_->register_builtin(b.name, b.path, b.format);
        } catch (const std::exception& e) {
            spdlog::warn("benchmark {} not registered: {}", b.name, e.what());
        }
    }
    assistant_ = std::make_unique<Assistant>(gateway_, TemplateLibrary::load(config_.template_dir),
                                             store_.get());
    jobs_ = std::make_unique<JobManager>(config_.server.workers, config_.server.queue_capacity,
                                         config_.server.job_cache);
}

Service::~Service() {
    // workers reference the service; stop them first
    jobs_.reset();
}

json Service::health() const {
    return {{"status", "ok"},
            {"providers", gateway_.provider_ids()},
            {"classifiers", classifiers_.ids()},
            {"workers", jobs_->workers()}};
}

json Service::config_json() const {
    json j = to_json(config_);
    json schemas = json::array();
    for (const auto& id : schemas_.ids()) schemas.push_back(schemas_.get(id));
    j["schemas"] = std::move(schemas);
    j["templates"] = assistant_->templates().ids();
    j["job_kinds"] = {"classification", "summarization", "ppl_gain", "persona"};
    return j;
}

std::string Service::provider_for(const json& params, const std::string& key,
                                  const std::string& fallback, Capability needed) const {
    std::string id = optional_string(params, key, fallback);
    if (id.empty()) {
        for (const auto& p : gateway_.provider_ids())
            if (gateway_.provider(p).has(needed)) return p;
        fail(ErrorCode::LmUnavailable,
             "no language-model provider with " + std::string(to_string(needed)) + " is configured");
    }
    if (!gateway_.has_provider(id))
        fail(ErrorCode::ValidationError, "unknown provider '" + id + "'");
    return id;
}

// --- datasets ----------------------------------------------------------------

json Service::ingest(const std::string& name, std::string_view raw, DataFormat format) {
    auto report = store_->ingest_dataset(name, raw, format);
    auto j = descriptor_json(report.descriptor);
    j["rows_read"] = report.rows_read;
    j["dropped_empty"] = report.dropped_empty;
    return j;
}

json Service::list_datasets() const {
    json out = json::array();
    for (const auto& d : store_->list()) out.push_back(descriptor_json(d));
    return out;
}

json Service::describe_dataset(const std::string& dataset_id) const {
    auto j = descriptor_json(store_->describe(dataset_id));
    j["conversations"] = json::array();
    if (j["layout"] == std::string(to_string(Layout::ConversationLevel)))
        j["conversations"] = store_->conversation_keys(dataset_id);
    json results = json::object();
    for (const char* kind : {"predictions", "summary", "persona", "ppl_gain"}) {
        json keys = json::array();
        for (const auto& [k, _] : store_->list_results(dataset_id, kind)) keys.push_back(k);
        results[kind] = std::move(keys);
    }
    j["results"] = std::move(results);
    return j;
}

void Service::delete_dataset(const std::string& dataset_id) { store_->delete_dataset(dataset_id); }

json Service::conversation(const std::string& dataset_id, const std::string& key) const {
    auto conv = store_->get_conversation(dataset_id, key);
    json turns = json::array();
    for (const auto& t : conv.turns) turns.push_back(record_json(t));
    return {{"conversation_id", conv.key},
            {"participants", conv.participants},
            {"turns", std::move(turns)}};
}

std::string Service::export_dataset(const std::string& dataset_id, DataFormat format) const {
    return store_->export_dataset(dataset_id, format);
}

// --- classification ----------------------------------------------------------

std::vector<Prediction> Service::stored_predictions(const std::string& dataset_id,
                                                    const std::string& classifier_id,
                                                    const std::string& schema_id) const {
    auto raw = store_->get_result(dataset_id, "predictions", classifier_id + "|" + schema_id);
    if (!raw)
        fail(ErrorCode::NotFound, "no stored predictions of '" + classifier_id + "' over '" +
                                      schema_id + "' for dataset '" + dataset_id + "'");
    return json::parse(*raw).get<std::vector<Prediction>>();
}

json Service::classify(const json& params, JobContext* ctx) {
    const auto classifier_id = optional_string(params, "classifier_id", config_.defaults.classifier);
    if (classifier_id.empty()) fail(ErrorCode::ValidationError, "'classifier_id' is required");
    if (!classifiers_.contains(classifier_id))
        fail(ErrorCode::ValidationError, "unknown classifier '" + classifier_id + "'");
    const auto& schema = schemas_.get(optional_string(params, "schema_id", config_.defaults.schema));
    const auto dataset_id = optional_string(params, "dataset_id");
    ClassifyOptions options;
    options.batch_size = optional_number<std::size_t>(params, "batch_size", options.batch_size);
    if (options.batch_size == 0) fail(ErrorCode::ValidationError, "batch_size must be positive");

    std::vector<MessageRecord> messages;
    if (!dataset_id.empty()) {
        messages = store_->records(dataset_id);
    } else if (params.contains("messages") && params["messages"].is_array()) {
        for (std::size_t i = 0; i < params["messages"].size(); ++i)
            messages.push_back(record_from_json(params["messages"][i], i + 1));
    } else {
        fail(ErrorCode::ValidationError, "give 'dataset_id' or a 'messages' array");
    }

    std::vector<Prediction> predictions;
    const std::size_t slice = options.batch_size * 4;
    for (std::size_t start = 0; start < messages.size(); start += slice) {
        check_cancelled(ctx);
        std::vector<MessageRecord> part(messages.begin() + start,
                                        messages.begin() + std::min(messages.size(), start + slice));
        auto preds = classify_batch(part, classifiers_, classifier_id, schema, options);
        predictions.insert(predictions.end(), preds.begin(), preds.end());
        if (ctx) ctx->report(predictions.size(), messages.size());
    }

    json out = {{"classifier_id", classifier_id}, {"schema_id", schema.schema_id}};
    json preds = json::array();
    const std::size_t k = optional_number<std::size_t>(params, "top_k", 0);
    for (const auto& p : predictions) {
        json j = p;
        if (k) j["top_k"] = top_k(p, k, schema);
        preds.push_back(std::move(j));
    }

    if (params.contains("verify") && params["verify"].is_object()) {
        const auto& v = params["verify"];
        auto provider = provider_for(v, "provider", config_.defaults.chat_provider, Capability::Chat);
        auto template_id = optional_string(v, "template_id", "verify_classification");
        auto body = assistant_->templates().get(template_id).body;
        check_cancelled(ctx);
        auto verdicts = llm_verify(messages, predictions, body, gateway_, provider);
        out["verifications"] = verdicts;
    }

    if (!dataset_id.empty())
        store_->put_result(dataset_id, "predictions", classifier_id + "|" + schema.schema_id,
                           json(predictions).dump());
    out["predictions"] = std::move(preds);
    return out;
}

ClassificationReport Service::evaluate(const json& params) {
    const auto& schema = schemas_.get(optional_string(params, "schema_id", config_.defaults.schema));
    std::vector<std::string> gold, pred;
    if (params.contains("gold") || params.contains("pred")) {
        try {
            gold = params.at("gold").get<std::vector<std::string>>();
            pred = params.at("pred").get<std::vector<std::string>>();
        } catch (const json::exception&) {
            fail(ErrorCode::ValidationError, "'gold' and 'pred' must be arrays of labels");
        }
    } else {
        const auto dataset_id = required_string(params, "dataset_id");
        const auto classifier_id =
            optional_string(params, "classifier_id", config_.defaults.classifier);
        std::vector<Prediction> predictions;
        try {
            predictions = stored_predictions(dataset_id, classifier_id, schema.schema_id);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NotFound || !store_->exists(dataset_id)) throw;
            predictions = json(classify({{"dataset_id", dataset_id},
                                         {"classifier_id", classifier_id},
                                         {"schema_id", schema.schema_id}})
                                   .at("predictions"))
                              .get<std::vector<Prediction>>();
        }
        std::map<std::string, std::string> predicted;
        for (const auto& p : predictions) predicted[p.message_id] = p.argmax_label;
        for (const auto& r : store_->records(dataset_id)) {
            if (!r.gold_label) continue;
            auto it = predicted.find(r.id);
            if (it == predicted.end()) continue;
            gold.push_back(*r.gold_label);
            pred.push_back(it->second);
        }
        if (gold.empty())
            fail(ErrorCode::ValidationError, "dataset '" + dataset_id + "' has no gold labels");
    }
    return classification_report(gold, pred, schema);
}

json Service::classify_report(const json& params) { return evaluate(params); }

// --- conversation analyses ---------------------------------------------------

json Service::ppl_gain(const json& params, JobContext* ctx) {
    const auto output = required_string(params, "output");
    const auto provider =
        provider_for(params, "provider", config_.defaults.score_provider, Capability::Logprobs);
    PplGainOptions options;
    options.granularity = parse_granularity(optional_string(params, "granularity", "message"));
    options.context_template = optional_string(params, "context_template", "{conversation}");
    if (!contains(options.context_template, "{conversation}"))
        fail(ErrorCode::MissingPlaceholder, "context_template lacks {conversation}");
    if (ctx) options.cancelled = [ctx] { return ctx->cancelled(); };

    ConversationRecord conv;
    const auto dataset_id = optional_string(params, "dataset_id");
    if (!dataset_id.empty())
        conv = store_->get_conversation(dataset_id, required_string(params, "conversation_key"));
    else
        conv = conversation_json_to_record(params.value("conversation", json()));

    auto result = to_json(perplexity_gain(conv, output, gateway_, provider, options));
    if (!dataset_id.empty())
        store_->put_result(dataset_id, "ppl_gain", conv.key + "|" + sha256_hex(output).substr(0, 16),
                           result.dump());
    return result;
}

std::set<std::string> Service::negative_labels(const json& params) const {
    std::set<std::string> out;
    auto schema_id = optional_string(params, "schema_id");
    if (params.contains("predictions") && params["predictions"].is_object())
        schema_id = optional_string(params["predictions"], "schema_id", schema_id);
    if (!schema_id.empty()) {
        if (auto neg = schemas_.get(schema_id).negative_label) out.insert(*neg);
        return out;
    }
    for (const auto& id : schemas_.ids())
        if (auto neg = schemas_.get(id).negative_label) out.insert(*neg);
    return out;
}

LabelMap Service::labels_for(const json& params, const std::string& dataset_id) const {
    LabelMap labels;
    if (params.contains("labels") && params["labels"].is_object()) {
        for (const auto& [id, label] : params["labels"].items()) {
            if (!label.is_string())
                fail(ErrorCode::ValidationError, "labels must map message ids to label strings");
            labels[id] = label.get<std::string>();
        }
    } else if (params.contains("predictions") && params["predictions"].is_object()) {
        const auto& p = params["predictions"];
        for (const auto& pred : stored_predictions(dataset_id, required_string(p, "classifier_id"),
                                                   required_string(p, "schema_id")))
            labels[pred.message_id] = pred.argmax_label;
    }
    return labels;
}

json Service::summarize(const json& params, JobContext* ctx) {
    const auto dataset_id = required_string(params, "dataset_id");
    const auto chat = provider_for(params, "provider", config_.defaults.chat_provider, Capability::Chat);
    const auto embed = provider_for(params, "embed_provider", config_.defaults.embed_provider,
                                    Capability::Embeddings);
    SummaryParams sp;
    if (auto t = optional_string(params, "template"); !t.empty()) sp.instruction_template = t;
    sp.negative_labels = negative_labels(params);
    sp.chunker = config_.chunker;
    if (params.contains("chunker") && params["chunker"].is_object()) {
        const auto& c = params["chunker"];
        sp.chunker.window = optional_number<std::size_t>(c, "window", sp.chunker.window);
        sp.chunker.percentile = optional_number<double>(c, "percentile", sp.chunker.percentile);
        sp.chunker.min_chunk_size =
            optional_number<std::size_t>(c, "min_chunk_size", sp.chunker.min_chunk_size);
        sp.chunker.merge_threshold =
            optional_number<double>(c, "merge_threshold", sp.chunker.merge_threshold);
    }
    validate_chunker_params(sp.chunker);
    sp.parallelism = config_.server.summary_parallelism;
    const auto labels = labels_for(params, dataset_id);

    std::vector<std::string> keys;
    if (auto key = optional_string(params, "conversation_key"); !key.empty())
        keys.push_back(key);
    else
        keys = store_->conversation_keys(dataset_id);
    if (keys.empty()) fail(ErrorCode::WrongLayout, "dataset has no conversations");

    json conversations = json::array(), failed = json::array();
    std::size_t chunks_done = 0, chunks_total = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        check_cancelled(ctx);
        auto conv = store_->get_conversation(dataset_id, keys[i]);
        std::size_t conv_total = 0;
        SummaryHooks hooks;
        hooks.cancelled = [ctx] { return ctx && ctx->cancelled(); };
        hooks.on_total = [&](std::size_t total) {
            conv_total = total;
            chunks_total += total;
            if (ctx) ctx->report_fraction(static_cast<double>(i) / keys.size(), chunks_done, chunks_total);
        };
        hooks.on_chunk_done = [&](std::size_t completed) {
            if (!ctx) return;
            double frac = (static_cast<double>(i) + static_cast<double>(completed) / conv_total) /
                          static_cast<double>(keys.size());
            ctx->report_fraction(frac, chunks_done + completed, chunks_total);
        };
        try {
            auto summary = summarize_conversation(conv, labels, gateway_, chat, embed, sp, hooks);
            auto j = to_json(summary);
            store_->put_result(dataset_id, "summary", conv.key, j.dump());
            conversations.push_back(std::move(j));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::Cancelled) throw;
            if (keys.size() == 1) throw;
            spdlog::warn("summarizing {} failed: {}", conv.key, e.what());
            failed.push_back({{"conversation_key", conv.key}, {"error", error_json(e)["error"]}});
        }
        chunks_done += conv_total;
    }
    if (conversations.empty())
        fail(ErrorCode::LmUnavailable, "every conversation failed to summarize");
    return {{"dataset_id", dataset_id}, {"conversations", conversations}, {"failed", failed}};
}

json Service::stored_summaries(const std::string& dataset_id) const {
    json out = json::array();
    for (const auto& key : store_->conversation_keys(dataset_id))
        if (auto raw = store_->get_result(dataset_id, "summary", key))
            out.push_back(json::parse(*raw));
    return out;
}

json Service::persona(const std::string& speaker, const json& params) {
    if (trim(speaker).empty()) fail(ErrorCode::ValidationError, "speaker is empty");
    const auto provider = provider_for(params, "provider", config_.defaults.chat_provider, Capability::Chat);
    const auto dataset_id = optional_string(params, "dataset_id");
    std::vector<std::string> summaries;
    if (params.contains("summaries")) {
        try {
            summaries = params["summaries"].get<std::vector<std::string>>();
        } catch (const json::exception&) {
            fail(ErrorCode::ValidationError, "'summaries' must be an array of strings");
        }
    } else if (!dataset_id.empty()) {
        summaries = summaries_for(stored_summaries(dataset_id), speaker);
    } else {
        fail(ErrorCode::ValidationError, "give 'dataset_id' or 'summaries'");
    }
    if (summaries.empty())
        fail(ErrorCode::EmptySummary, "no summaries mention speaker '" + speaker + "'");

    auto profile = to_json(analyze_persona(speaker, summaries, gateway_, provider));
    if (!dataset_id.empty()) store_->put_result(dataset_id, "persona", speaker, profile.dump());
    return profile;
}

json Service::personas(const json& params, JobContext* ctx) {
    const auto dataset_id = required_string(params, "dataset_id");
    std::vector<std::string> speakers;
    if (params.contains("speakers")) {
        speakers = params["speakers"].get<std::vector<std::string>>();
    } else {
        std::set<std::string> seen;
        for (const auto& conv : stored_summaries(dataset_id))
            for (const auto& [g, chunks] : conv.at("results").items())
                for (const auto& [c, by_speaker] : chunks.items())
                    for (const auto& [s, _] : by_speaker.items()) seen.insert(s);
        speakers.assign(seen.begin(), seen.end());
    }
    if (speakers.empty()) fail(ErrorCode::EmptySummary, "no summarized speakers");
    json profiles = json::array();
    for (std::size_t i = 0; i < speakers.size(); ++i) {
        check_cancelled(ctx);
        json p = params;
        p.erase("speakers");
        profiles.push_back(persona(speakers[i], p));
        if (ctx) ctx->report(i + 1, speakers.size());
    }
    return {{"dataset_id", dataset_id}, {"profiles", profiles}};
}

// --- jobs ----------------------------------------------------------------------

void Service::validate_job(JobKind kind, const json& params) const {
    if (!params.is_object()) fail(ErrorCode::ValidationError, "job parameters must be an object");
    auto dataset_id = optional_string(params, "dataset_id");
    if (!dataset_id.empty() && !store_->exists(dataset_id))
        fail(ErrorCode::ValidationError, "unknown dataset '" + dataset_id + "'");
    switch (kind) {
        case JobKind::Classification: {
            auto c = optional_string(params, "classifier_id", config_.defaults.classifier);
            if (c.empty() || !classifiers_.contains(c))
                fail(ErrorCode::ValidationError, "unknown classifier '" + c + "'");
            auto s = optional_string(params, "schema_id", config_.defaults.schema);
            if (!schemas_.contains(s)) fail(ErrorCode::ValidationError, "unknown schema '" + s + "'");
            if (dataset_id.empty() && !params.contains("messages"))
                fail(ErrorCode::ValidationError, "give 'dataset_id' or 'messages'");
            break;
        }
        case JobKind::Summarization:
            required_string(params, "dataset_id");
            provider_for(params, "provider", config_.defaults.chat_provider, Capability::Chat);
            if (auto key = optional_string(params, "conversation_key"); !key.empty())
                store_->get_conversation(dataset_id, key);
            break;
        case JobKind::PplGain:
            required_string(params, "output");
            provider_for(params, "provider", config_.defaults.score_provider, Capability::Logprobs);
            if (!dataset_id.empty()) store_->get_conversation(dataset_id, required_string(params, "conversation_key"));
            break;
        case JobKind::Persona:
            required_string(params, "dataset_id");
            provider_for(params, "provider", config_.defaults.chat_provider, Capability::Chat);
            break;
    }
}

json Service::submit_job(const std::string& kind_name, const json& params) {
    const auto kind = parse_job_kind(kind_name);
    try {
        validate_job(kind, params);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NotFound) fail(ErrorCode::ValidationError, e.what());
        throw;
    }
    JobFn fn;
    switch (kind) {
        case JobKind::Classification:
            fn = [this, params](JobContext& ctx) { return classify(params, &ctx); };
            break;
        case JobKind::Summarization:
            fn = [this, params](JobContext& ctx) { return summarize(params, &ctx); };
            break;
        case JobKind::PplGain:
            fn = [this, params](JobContext& ctx) { return ppl_gain(params, &ctx); };
            break;
        case JobKind::Persona:
            fn = [this, params](JobContext& ctx) { return personas(params, &ctx); };
            break;
    }
    auto hash = sha256_hex(std::string(to_string(kind)) + "\n" + params.dump());
    return to_json(jobs_->submit(kind, std::move(fn), hash));
}

json Service::job(const std::string& job_id) const {
    auto j = to_json(jobs_->poll(job_id));
    if (auto r = jobs_->result(job_id)) j["result"] = *r;
    return j;
}

json Service::cancel_job(const std::string& job_id) { return to_json(jobs_->cancel(job_id)); }

json Service::list_jobs() const {
    json out = json::array();
    for (const auto& s : jobs_->list()) out.push_back(to_json(s));
    return out;
}

// --- assistant -------------------------------------------------------------------

json Service::create_session(const json& params) {
    std::optional<BoundContext> context;
    const auto dataset_id = optional_string(params, "dataset_id");
    if (!dataset_id.empty()) {
        std::vector<MessageRecord> rows;
        if (auto key = optional_string(params, "conversation_key"); !key.empty()) {
            rows = store_->get_conversation(dataset_id, key).turns;
        } else if (params.contains("message_ids")) {
            std::set<std::string> wanted;
            for (const auto& id : params["message_ids"]) wanted.insert(id.get<std::string>());
            for (auto& r : store_->records(dataset_id))
                if (wanted.count(r.id)) rows.push_back(std::move(r));
        } else {
            fail(ErrorCode::ValidationError, "give 'conversation_key' or 'message_ids' to bind rows");
        }
        if (rows.size() > kMaxBoundRows)
            fail(ErrorCode::ValidationError,
                 "at most " + std::to_string(kMaxBoundRows) + " rows can be bound to a session");
        auto labels = labels_for(params, dataset_id);
        BoundContext ctx;
        ctx.dataset_id = dataset_id;
        for (auto& r : rows) {
            auto it = labels.find(r.id);
            ctx.turns.push_back({std::move(r), it == labels.end() ? std::string() : it->second});
        }
        context = std::move(ctx);
    }
    auto id = assistant_->create_session(std::move(context));
    return session(id);
}

json Service::session(const std::string& session_id) const {
    auto s = assistant_->session(session_id);
    json j = {{"session_id", s.session_id},
              {"transcript", transcript_json(s.transcript)},
              {"bound_rows", s.context ? s.context->turns.size() : 0}};
    if (s.context && s.context->dataset_id) j["dataset_id"] = *s.context->dataset_id;
    return j;
}

std::pair<std::string, MessageInput> Service::prepare_message(const std::string& session_id,
                                                              const json& params) const {
    if (!params.is_object()) fail(ErrorCode::ValidationError, "message body must be an object");
    MessageInput input;
    input.text = optional_string(params, "text");
    if (auto t = optional_string(params, "template_id"); !t.empty()) input.template_id = t;
    if (params.contains("bindings")) {
        try {
            input.bindings = params["bindings"].get<std::map<std::string, std::string>>();
        } catch (const json::exception&) {
            fail(ErrorCode::ValidationError, "'bindings' must map names to strings");
        }
    }
    auto provider = provider_for(params, "provider", config_.defaults.chat_provider, Capability::Chat);
    assistant_->resolve_input(session_id, input);
    return {provider, std::move(input)};
}

std::string Service::send_message(const std::string& session_id, const json& params,
                                  const DeltaSink& sink) {
    auto [provider, input] = prepare_message(session_id, params);
    return assistant_->send_message(session_id, input, provider, sink);
}

json Service::import_session(const json& document) {
    const json& transcript = document.is_object() && document.contains("transcript")
                                 ? document["transcript"]
                                 : document;
    return session(assistant_->import_session(transcript));
}

}  // namespace toxiscope

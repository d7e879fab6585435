#include "toxiscope/classify.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/util.hpp"

#include "httplib.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace toxiscope {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schemas

std::optional<std::size_t> LabelSchema::index_of(const std::string& label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
}

void validate_schema(const LabelSchema& schema, const LabelSchema* parent) {
    if (schema.schema_id.empty()) fail(ErrorCode::ValidationError, "schema id is empty");
    if (schema.labels.empty())
        fail(ErrorCode::ValidationError, "schema '" + schema.schema_id + "' has no labels");
    std::set<std::string> unique(schema.labels.begin(), schema.labels.end());
    if (unique.size() != schema.labels.size())
        fail(ErrorCode::ValidationError, "schema '" + schema.schema_id + "' repeats a label");
    if (schema.negative_label && !schema.index_of(*schema.negative_label))
        fail(ErrorCode::ValidationError,
             "schema '" + schema.schema_id + "': negative label is not a schema label");
    if (!schema.parent_map) return;
    for (const auto& label : schema.labels)
        if (!schema.parent_map->count(label))
            fail(ErrorCode::ValidationError,
                 "schema '" + schema.schema_id + "': parent_map misses '" + label + "'");
    if (!parent) return;
    std::set<std::string> reached;
    for (const auto& [child, up] : *schema.parent_map) {
        if (!parent->index_of(up))
            fail(ErrorCode::ValidationError, "schema '" + schema.schema_id + "': parent label '" +
                                                 up + "' not in '" + parent->schema_id + "'");
        reached.insert(up);
    }
    for (const auto& label : parent->labels)
        if (parent->is_toxic(label) && !reached.count(label))
            fail(ErrorCode::ValidationError, "schema '" + schema.schema_id +
                                                 "': parent_map does not reach '" + label + "'");
}

std::vector<LabelSchema> default_schemas() {
    LabelSchema binary{"edos_binary", {"sexist", "not sexist"}, std::nullopt, std::nullopt,
                       "not sexist"};

    const std::vector<std::string> categories = {"threats", "derogation", "animosity",
                                                 "prejudiced discussion"};
    LabelSchema category{"edos_4", categories, std::map<std::string, std::string>{},
                         "edos_binary", std::nullopt};
    for (const auto& c : categories) (*category.parent_map)[c] = "sexist";

    // Fine-grained vectors in listing order; the first two refine threats,
    // the next three derogation, four animosity, two prejudiced discussion.
    const std::vector<std::pair<std::string, std::string>> vectors = {
        {"Threats of harm", "threats"},
        {"Incitement and encouragement of harm", "threats"},
        {"Descriptive attacks", "derogation"},
        {"Aggressive and emotive attacks", "derogation"},
        {"Dehumanising attacks and overt sexual objectification", "derogation"},
        {"Causal use of gendered slurs, profanities and insults", "animosity"},
        {"Immutable gender differences and gender stereotypes", "animosity"},
        {"Backhanded gendered compliments", "animosity"},
        {"Condescending explanations or unwelcome advice", "animosity"},
        {"Supporting mistreatment of individual women", "prejudiced discussion"},
        {"Supporting systemic discrimination against women as a group", "prejudiced discussion"},
    };
    LabelSchema fine{"edos_11", {}, std::map<std::string, std::string>{}, "edos_4", std::nullopt};
    for (const auto& [label, parent] : vectors) {
        fine.labels.push_back(label);
        (*fine.parent_map)[label] = parent;
    }
    return {binary, category, fine};
}

SchemaRegistry::SchemaRegistry() {
    for (auto& s : default_schemas()) add(std::move(s));
}

void SchemaRegistry::add(LabelSchema schema) {
    const LabelSchema* parent = nullptr;
    if (schema.parent_schema_id) {
        auto it = schemas_.find(*schema.parent_schema_id);
        if (it == schemas_.end())
            fail(ErrorCode::ValidationError, "schema '" + schema.schema_id +
                                                 "': unknown parent '" + *schema.parent_schema_id +
                                                 "'");
        parent = &it->second;
    }
    validate_schema(schema, parent);
    auto id = schema.schema_id;
    schemas_[id] = std::move(schema);
}

const LabelSchema& SchemaRegistry::get(const std::string& schema_id) const {
    auto it = schemas_.find(schema_id);
    if (it == schemas_.end()) fail(ErrorCode::NotFound, "schema '" + schema_id + "' not found");
    return it->second;
}

bool SchemaRegistry::contains(const std::string& schema_id) const {
    return schemas_.count(schema_id) > 0;
}

std::vector<std::string> SchemaRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, s] : schemas_) out.push_back(id);
    return out;
}

// ---------------------------------------------------------------------------
// Predictions

double Prediction::probability_of(const std::string& label) const {
    for (const auto& lp : distribution)
        if (lp.label == label) return lp.probability;
    return 0.0;
}

Prediction make_prediction(std::string message_id, const LabelSchema& schema,
                           std::vector<double> probabilities) {
    if (probabilities.size() != schema.labels.size())
        fail(ErrorCode::SchemaMismatch, "expected " + std::to_string(schema.labels.size()) +
                                            " scores for schema '" + schema.schema_id + "', got " +
                                            std::to_string(probabilities.size()));
    Prediction p;
    p.message_id = std::move(message_id);
    p.schema_id = schema.schema_id;
    std::size_t best = 0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        p.distribution.push_back({schema.labels[i], probabilities[i]});
        if (probabilities[i] > probabilities[best]) best = i;
    }
    p.argmax_label = schema.labels[best];
    return p;
}

std::vector<double> normalize_scores(std::span<const double> scores) {
    if (scores.empty()) fail(ErrorCode::SchemaMismatch, "empty score vector");
    for (double s : scores)
        if (!std::isfinite(s)) fail(ErrorCode::InvalidResponse, "non-finite classifier score");
    double sum = std::accumulate(scores.begin(), scores.end(), 0.0);
    bool is_distribution = std::all_of(scores.begin(), scores.end(),
                                       [](double s) { return s >= 0.0 && s <= 1.0; }) &&
                           std::abs(sum - 1.0) <= 1e-6;
    if (is_distribution) {
        std::vector<double> out(scores.begin(), scores.end());
        for (double& v : out) v /= sum;
        return out;
    }
    double peak = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out;
    out.reserve(scores.size());
    double z = 0.0;
    for (double s : scores) {
        out.push_back(std::exp(s - peak));
        z += out.back();
    }
    for (double& v : out) v /= z;
    return out;
}

std::string coarsen_label(const std::string& label, const LabelSchema& child) {
    if (!child.parent_map)
        fail(ErrorCode::SchemaMismatch, "schema '" + child.schema_id + "' has no parent");
    auto it = child.parent_map->find(label);
    if (it == child.parent_map->end())
        fail(ErrorCode::UnknownLabel, "label '" + label + "' not in '" + child.schema_id + "'");
    return it->second;
}

Prediction coarsen(const Prediction& prediction, const LabelSchema& child,
                   const LabelSchema& parent) {
    if (prediction.schema_id != child.schema_id || child.parent_schema_id != parent.schema_id)
        fail(ErrorCode::SchemaMismatch, "cannot coarsen '" + prediction.schema_id + "' into '" +
                                            parent.schema_id + "'");
    std::vector<double> probs(parent.labels.size(), 0.0);
    for (const auto& lp : prediction.distribution)
        probs[*parent.index_of(coarsen_label(lp.label, child))] += lp.probability;
    return make_prediction(prediction.message_id, parent, std::move(probs));
}

// ---------------------------------------------------------------------------
// Backends

StubClassifier::StubClassifier(std::string id, std::vector<std::string> schema_ids, Scorer scorer)
    : id_(std::move(id)), schema_ids_(std::move(schema_ids)), scorer_(std::move(scorer)) {}

bool StubClassifier::supports(const std::string& schema_id) const {
    return std::find(schema_ids_.begin(), schema_ids_.end(), schema_id) != schema_ids_.end();
}

std::vector<std::vector<double>> StubClassifier::score(const std::vector<std::string>& texts,
                                                       const LabelSchema& schema) {
    {
        std::lock_guard lock(mutex_);
        batch_sizes_.push_back(texts.size());
    }
    std::vector<std::vector<double>> out;
    for (const auto& text : texts) {
        if (scorer_) {
            out.push_back(scorer_(text, schema));
            continue;
        }
        std::vector<double> logits;
        for (const auto& label : schema.labels) {
            auto h = sha256_hex(id_ + "\x1f" + text + "\x1f" + label);
            logits.push_back(std::stoi(h.substr(0, 4), nullptr, 16) / 65535.0 * 4.0 - 2.0);
        }
        out.push_back(std::move(logits));
    }
    return out;
}

std::size_t StubClassifier::calls() const {
    std::lock_guard lock(mutex_);
    return batch_sizes_.size();
}

std::vector<std::size_t> StubClassifier::batch_sizes() const {
    std::lock_guard lock(mutex_);
    return batch_sizes_;
}

HttpClassifier::HttpClassifier(std::string id, std::string url, std::vector<std::string> schema_ids,
                               int timeout_seconds)
    : id_(std::move(id)),
      url_(std::move(url)),
      schema_ids_(std::move(schema_ids)),
      timeout_seconds_(timeout_seconds) {}

bool HttpClassifier::supports(const std::string& schema_id) const {
    return schema_ids_.empty() ||
           std::find(schema_ids_.begin(), schema_ids_.end(), schema_id) != schema_ids_.end();
}

std::vector<std::vector<double>> HttpClassifier::score(const std::vector<std::string>& texts,
                                                       const LabelSchema& schema) {
    auto scheme_end = url_.find("://");
    auto path_start = url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string origin = url_.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

    httplib::Client client(origin);
    client.set_connection_timeout(std::min(timeout_seconds_, 10), 0);
    client.set_read_timeout(timeout_seconds_, 0);
    json body = {{"texts", texts}, {"schema_id", schema.schema_id}};
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res)
        fail(ErrorCode::BackendUnavailable,
             "classifier '" + id_ + "' unreachable: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        fail(ErrorCode::BackendUnavailable,
             "classifier '" + id_ + "' returned HTTP " + std::to_string(res->status));
    try {
        return json::parse(res->body).at("scores").get<std::vector<std::vector<double>>>();
    } catch (const json::exception& e) {
        fail(ErrorCode::BackendUnavailable,
             "classifier '" + id_ + "' returned a malformed body: " + e.what());
    }
}

void validate_ensemble(const EnsembleConfig& config) {
    if (config.member_ids.size() < 2)
        fail(ErrorCode::ValidationError, "ensemble needs at least two members");
    std::set<std::string> unique(config.member_ids.begin(), config.member_ids.end());
    if (unique.size() != config.member_ids.size())
        fail(ErrorCode::ValidationError, "ensemble repeats a member");
    if (!unique.count(config.fallback_id))
        fail(ErrorCode::ValidationError, "fallback '" + config.fallback_id + "' is not a member");
}

void ClassifierRegistry::add(std::shared_ptr<ClassifierBackend> backend) {
    auto id = backend->id();
    backends_[id] = std::move(backend);
}

void ClassifierRegistry::add_ensemble(EnsembleConfig config) {
    validate_ensemble(config);
    for (const auto& m : config.member_ids)
        if (!backends_.count(m))
            fail(ErrorCode::ValidationError, "ensemble member '" + m + "' is not registered");
    auto id = config.ensemble_id;
    ensembles_[id] = std::move(config);
}

bool ClassifierRegistry::contains(const std::string& id) const {
    return backends_.count(id) || ensembles_.count(id);
}

std::shared_ptr<ClassifierBackend> ClassifierRegistry::backend(const std::string& id) const {
    auto it = backends_.find(id);
    if (it == backends_.end())
        fail(ErrorCode::BackendUnavailable, "classifier '" + id + "' is not registered");
    return it->second;
}

std::optional<EnsembleConfig> ClassifierRegistry::ensemble(const std::string& id) const {
    auto it = ensembles_.find(id);
    if (it == ensembles_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> ClassifierRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, b] : backends_) out.push_back(id);
    for (const auto& [id, e] : ensembles_) out.push_back(id);
    return out;
}

// ---------------------------------------------------------------------------
// Classification

std::vector<Prediction> classify_batch(const std::vector<MessageRecord>& messages,
                                       ClassifierBackend& backend, const LabelSchema& schema,
                                       const ClassifyOptions& options) {
    if (!backend.supports(schema.schema_id))
        fail(ErrorCode::SchemaMismatch, "classifier '" + backend.id() + "' does not serve schema '" +
                                            schema.schema_id + "'");
    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    std::vector<Prediction> out;
    out.reserve(messages.size());
    for (std::size_t start = 0; start < messages.size(); start += batch) {
        std::size_t end = std::min(messages.size(), start + batch);
        std::vector<std::string> texts;
        for (std::size_t i = start; i < end; ++i) texts.push_back(messages[i].text);
        auto rows = backend.score(texts, schema);
        if (rows.size() != texts.size())
            fail(ErrorCode::SchemaMismatch, "classifier '" + backend.id() + "' returned " +
                                                std::to_string(rows.size()) + " rows for " +
                                                std::to_string(texts.size()) + " texts");
        for (std::size_t i = start; i < end; ++i) {
            const auto& row = rows[i - start];
            if (row.size() != schema.labels.size())
                fail(ErrorCode::SchemaMismatch,
                     "classifier '" + backend.id() + "' returned " + std::to_string(row.size()) +
                         " scores for schema '" + schema.schema_id + "'");
            out.push_back(make_prediction(messages[i].id, schema, normalize_scores(row)));
        }
    }
    return out;
}

std::vector<Prediction> classify_batch(const std::vector<MessageRecord>& messages,
                                       const ClassifierRegistry& registry,
                                       const std::string& classifier_id,
                                       const LabelSchema& schema,
                                       const ClassifyOptions& options) {
    auto ensemble = registry.ensemble(classifier_id);
    if (!ensemble) return classify_batch(messages, *registry.backend(classifier_id), schema, options);

    std::map<std::string, std::vector<Prediction>> member_preds;
    for (const auto& m : ensemble->member_ids)
        member_preds[m] = classify_batch(messages, *registry.backend(m), schema, options);
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        std::map<std::string, Prediction> per_member;
        for (const auto& [m, preds] : member_preds) per_member[m] = preds[i];
        out.push_back(ensemble_predict(per_member, *ensemble, schema));
    }
    return out;
}

Prediction ensemble_predict(const std::map<std::string, Prediction>& per_member,
                            const EnsembleConfig& config, const LabelSchema& schema) {
    validate_ensemble(config);
    for (const auto& m : config.member_ids)
        if (!per_member.count(m))
            fail(ErrorCode::MissingMember, "no prediction from member '" + m + "'");
    if (per_member.size() != config.member_ids.size())
        fail(ErrorCode::MissingMember, "predictions supplied for non-members");

    std::string message_id = per_member.at(config.member_ids.front()).message_id;
    std::vector<double> mean(schema.labels.size(), 0.0);
    std::map<std::string, std::size_t> votes;
    for (const auto& m : config.member_ids) {
        const auto& p = per_member.at(m);
        if (p.schema_id != schema.schema_id)
            fail(ErrorCode::SchemaMismatch, "member '" + m + "' predicted schema '" + p.schema_id +
                                                "', expected '" + schema.schema_id + "'");
        if (!schema.index_of(p.argmax_label))
            fail(ErrorCode::UnknownLabel, "member '" + m + "' voted unknown label '" +
                                              p.argmax_label + "'");
        for (const auto& lp : p.distribution) {
            auto idx = schema.index_of(lp.label);
            if (!idx) fail(ErrorCode::UnknownLabel, "unknown label '" + lp.label + "'");
            mean[*idx] += lp.probability;
        }
        ++votes[p.argmax_label];
    }
    double total = std::accumulate(mean.begin(), mean.end(), 0.0);
    for (double& v : mean) v = total > 0 ? v / total : 1.0 / static_cast<double>(mean.size());

    auto out = make_prediction(message_id, schema, std::move(mean));
    const std::size_t members = config.member_ids.size();
    std::optional<std::string> majority;
    for (const auto& [label, count] : votes)
        if (2 * count > members) majority = label;
    out.argmax_label = majority ? *majority : per_member.at(config.fallback_id).argmax_label;
    return out;
}

std::vector<LabelProb> top_k(const Prediction& prediction, std::size_t k,
                             const LabelSchema& schema) {
    if (k < 1 || k > schema.labels.size())
        fail(ErrorCode::KOutOfRange, "k=" + std::to_string(k) + " outside [1, " +
                                         std::to_string(schema.labels.size()) + "]");
    std::vector<LabelProb> ranked;
    for (const auto& label : schema.labels) ranked.push_back({label, prediction.probability_of(label)});
    // stable_sort keeps schema order among equal probabilities
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.probability > b.probability; });
    ranked.resize(k);
    return ranked;
}

// ---------------------------------------------------------------------------
// Evaluation

ClassificationReport classification_report(const std::vector<std::string>& gold,
                                            const std::vector<std::string>& pred,
                                            const LabelSchema& schema) {
    if (gold.size() != pred.size())
        fail(ErrorCode::LengthMismatch, "gold has " + std::to_string(gold.size()) +
                                            " labels, pred has " + std::to_string(pred.size()));
    if (gold.empty()) fail(ErrorCode::LengthMismatch, "no labels to evaluate");

    const std::size_t n_labels = schema.labels.size();
    ClassificationReport r;
    r.schema_id = schema.schema_id;
    r.matrix_labels = schema.labels;
    r.confusion_matrix.assign(n_labels, std::vector<std::size_t>(n_labels, 0));

    auto index = [&](const std::string& label) {
        auto idx = schema.index_of(label);
        if (!idx) fail(ErrorCode::UnknownLabel, "label '" + label + "' not in schema '" +
                                                    schema.schema_id + "'");
        return *idx;
    };
    std::size_t correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        auto g = index(gold[i]);
        auto p = index(pred[i]);
        ++r.confusion_matrix[g][p];
        if (g == p) ++correct;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());

    double f1_sum = 0.0;
    for (std::size_t c = 0; c < n_labels; ++c) {
        std::size_t tp = r.confusion_matrix[c][c];
        std::size_t gold_count = 0, pred_count = 0;
        for (std::size_t k = 0; k < n_labels; ++k) {
            gold_count += r.confusion_matrix[c][k];
            pred_count += r.confusion_matrix[k][c];
        }
        if (gold_count == 0 && pred_count == 0) continue;
        LabelMetrics m;
        m.label = schema.labels[c];
        m.support = gold_count;
        m.precision = pred_count ? static_cast<double>(tp) / static_cast<double>(pred_count) : 0.0;
        m.recall = gold_count ? static_cast<double>(tp) / static_cast<double>(gold_count) : 0.0;
        m.f1 = (m.precision + m.recall) > 0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        f1_sum += m.f1;
        r.per_label.push_back(m);
    }
    r.macro_f1 = f1_sum / static_cast<double>(r.per_label.size());
    return r;
}

std::string report_to_csv(const ClassificationReport& report) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed;
    out << "label,precision,recall,f1,support\r\n";
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    };
    for (const auto& m : report.per_label)
        out << quote(m.label) << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ','
            << m.support << "\r\n";
    out << "macro_f1,,," << report.macro_f1 << ",\r\n";
    out << "accuracy,,," << report.accuracy << ",\r\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// LLM verification

std::optional<Verdict> parse_verdict(std::string_view reply) {
    std::size_t i = 0;
    while (i < reply.size() &&
           (std::isspace(static_cast<unsigned char>(reply[i])) || reply[i] == '*' ||
            reply[i] == '"' || reply[i] == '`' || reply[i] == '#'))
        ++i;
    auto rest = reply.substr(i);
    auto starts_with_token = [&](std::string_view token) {
        if (rest.size() < token.size()) return false;
        for (std::size_t k = 0; k < token.size(); ++k)
            if (std::toupper(static_cast<unsigned char>(rest[k])) != token[k]) return false;
        return rest.size() == token.size() ||
               !std::isalpha(static_cast<unsigned char>(rest[token.size()]));
    };
    if (starts_with_token("DISAGREE")) return Verdict::Disagree;
    if (starts_with_token("AGREE")) return Verdict::Agree;
    return std::nullopt;
}

std::vector<Verification> llm_verify(const std::vector<MessageRecord>& messages,
                                     const std::vector<Prediction>& predictions,
                                     const std::string& template_body, LmGateway& gateway,
                                     const std::string& provider_id) {
    if (messages.size() != predictions.size())
        fail(ErrorCode::LengthMismatch, "messages and predictions differ in length");
    if (!contains(template_body, "{message}") || !contains(template_body, "{label}"))
        fail(ErrorCode::MissingPlaceholder, "verification template needs {message} and {label}");
    if (!gateway.provider(provider_id).has(Capability::Chat))
        fail(ErrorCode::LmUnavailable, "provider '" + provider_id + "' cannot chat");

    std::vector<Verification> out;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        auto prompt = substitute(template_body, {{"message", messages[i].text},
                                                 {"label", predictions[i].argmax_label}});
        std::vector<ChatMessage> convo = {{"user", prompt}};
        std::optional<Verdict> verdict;
        std::string reply;
        for (int attempt = 0; attempt < 2 && !verdict; ++attempt) {
            reply = gateway.chat(provider_id, convo);
            verdict = parse_verdict(reply);
        }
        if (!verdict)
            fail(ErrorCode::UnparseableVerdict,
                 "no AGREE/DISAGREE token for message '" + messages[i].id + "'");
        out.push_back({messages[i].id, *verdict, reply});
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const LabelSchema& s) {
    j = {{"schema_id", s.schema_id}, {"labels", s.labels}};
    if (s.parent_map) j["parent_map"] = *s.parent_map;
    if (s.parent_schema_id) j["parent_schema_id"] = *s.parent_schema_id;
    if (s.negative_label) j["negative_label"] = *s.negative_label;
}

void to_json(json& j, const LabelProb& p) {
    j = {{"label", p.label}, {"probability", p.probability}};
}

void to_json(json& j, const Prediction& p) {
    json dist = json::object();
    for (const auto& lp : p.distribution) dist[lp.label] = lp.probability;
    json order = json::array();
    for (const auto& lp : p.distribution) order.push_back(lp.label);
    j = {{"message_id", p.message_id},
         {"schema_id", p.schema_id},
         {"labels", order},
         {"distribution", dist},
         {"argmax_label", p.argmax_label}};
}

void from_json(const json& j, Prediction& p) {
    p.message_id = j.at("message_id").get<std::string>();
    p.schema_id = j.at("schema_id").get<std::string>();
    p.argmax_label = j.at("argmax_label").get<std::string>();
    p.distribution.clear();
    for (const auto& label : j.at("labels"))
        p.distribution.push_back(
            {label.get<std::string>(), j.at("distribution").at(label.get<std::string>()).get<double>()});
}

void to_json(json& j, const ClassificationReport& r) {
    json per_label = json::array();
    for (const auto& m : r.per_label)
        per_label.push_back({{"label", m.label},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1},
                             {"support", m.support}});
    j = {{"schema_id", r.schema_id},        {"per_label", per_label},
         {"macro_f1", r.macro_f1},          {"accuracy", r.accuracy},
         {"matrix_labels", r.matrix_labels}, {"confusion_matrix", r.confusion_matrix}};
}

void to_json(json& j, const Verification& v) {
    j = {{"message_id", v.message_id},
         {"verdict", v.verdict == Verdict::Agree ? "agree" : "disagree"},
         {"rationale", v.rationale}};
}

}  // namespace toxiscope

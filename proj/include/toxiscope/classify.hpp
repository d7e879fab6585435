#pragma once

#include "toxiscope/store.hpp"

#include "json.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace toxiscope {

class LmGateway;

struct LabelSchema {
    std::string schema_id;
    std::vector<std::string> labels;
    /// Label -> label of the coarser schema named by parent_schema_id.
    std::optional<std::map<std::string, std::string>> parent_map;
    std::optional<std::string> parent_schema_id;
    /// The "nothing toxic here" label, if this schema has one.
    std::optional<std::string> negative_label;

    std::optional<std::size_t> index_of(const std::string& label) const;
    bool is_toxic(const std::string& label) const {
        return !negative_label || label != *negative_label;
    }
};

/// Checks label uniqueness and, when a parent is given, that parent_map is
/// total over labels and reaches every non-negative parent label.
void validate_schema(const LabelSchema& schema, const LabelSchema* parent = nullptr);

/// Binary, 4-category and 11-vector sexism taxonomies with 11->4->2 parents.
std::vector<LabelSchema> default_schemas();

class SchemaRegistry {
public:
    SchemaRegistry();  // seeded with default_schemas()
    void add(LabelSchema schema);
    const LabelSchema& get(const std::string& schema_id) const;
    bool contains(const std::string& schema_id) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, LabelSchema> schemas_;
};

struct LabelProb {
    std::string label;
    double probability = 0.0;
};

struct Prediction {
    std::string message_id;
    std::string schema_id;
    std::vector<LabelProb> distribution;  // schema label order
    std::string argmax_label;

    double probability_of(const std::string& label) const;
};

/// Builds a prediction from a probability vector aligned to schema labels.
/// argmax ties resolve to the earliest label in schema order.
Prediction make_prediction(std::string message_id, const LabelSchema& schema,
                           std::vector<double> probabilities);

/// Keeps a valid probability vector as-is; anything else is softmaxed.
std::vector<double> normalize_scores(std::span<const double> scores);

/// Maps a prediction onto the parent schema by summing child probabilities.
Prediction coarsen(const Prediction& prediction, const LabelSchema& child,
                   const LabelSchema& parent);
std::string coarsen_label(const std::string& label, const LabelSchema& child);

// --- backends ---------------------------------------------------------------

class ClassifierBackend {
public:
    virtual ~ClassifierBackend() = default;
    virtual const std::string& id() const = 0;
    virtual bool supports(const std::string& schema_id) const = 0;
    /// One score row per text, aligned to schema label order. Scores may be
    /// unnormalized. Throws BackendUnavailable on transport failure.
    virtual std::vector<std::vector<double>> score(const std::vector<std::string>& texts,
                                                   const LabelSchema& schema) = 0;
};

/// Deterministic in-process backend. Without a scorer, logits are derived from
/// a hash of (text, label) so identical inputs always score identically.
class StubClassifier : public ClassifierBackend {
public:
    using Scorer = std::function<std::vector<double>(const std::string& text,
                                                     const LabelSchema& schema)>;

    StubClassifier(std::string id, std::vector<std::string> schema_ids, Scorer scorer = {});
    const std::string& id() const override { return id_; }
    bool supports(const std::string& schema_id) const override;
    std::vector<std::vector<double>> score(const std::vector<std::string>& texts,
                                           const LabelSchema& schema) override;

    std::size_t calls() const;
    std::vector<std::size_t> batch_sizes() const;

private:
    std::string id_;
    std::vector<std::string> schema_ids_;
    Scorer scorer_;
    mutable std::mutex mutex_;
    std::vector<std::size_t> batch_sizes_;
};

/// Remote inference endpoint: POST {texts, schema_id} -> {scores}.
class HttpClassifier : public ClassifierBackend {
public:
    HttpClassifier(std::string id, std::string url, std::vector<std::string> schema_ids,
                   int timeout_seconds = 30);
    const std::string& id() const override { return id_; }
    bool supports(const std::string& schema_id) const override;
    std::vector<std::vector<double>> score(const std::vector<std::string>& texts,
                                           const LabelSchema& schema) override;

private:
    std::string id_;
    std::string url_;
    std::vector<std::string> schema_ids_;
    int timeout_seconds_;
};

struct EnsembleConfig {
    std::string ensemble_id;
    std::vector<std::string> member_ids;
    std::string fallback_id;
};
void validate_ensemble(const EnsembleConfig& config);

class ClassifierRegistry {
public:
    void add(std::shared_ptr<ClassifierBackend> backend);
    void add_ensemble(EnsembleConfig config);
    bool contains(const std::string& id) const;
    std::shared_ptr<ClassifierBackend> backend(const std::string& id) const;
    std::optional<EnsembleConfig> ensemble(const std::string& id) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, std::shared_ptr<ClassifierBackend>> backends_;
    std::map<std::string, EnsembleConfig> ensembles_;
};

struct ClassifyOptions {
    std::size_t batch_size = 32;
};

std::vector<Prediction> classify_batch(const std::vector<MessageRecord>& messages,
                                       ClassifierBackend& backend, const LabelSchema& schema,
                                       const ClassifyOptions& options = {});
/// Resolves the id against the registry; ensembles run every member.
std::vector<Prediction> classify_batch(const std::vector<MessageRecord>& messages,
                                       const ClassifierRegistry& registry,
                                       const std::string& classifier_id,
                                       const LabelSchema& schema,
                                       const ClassifyOptions& options = {});

/// Strict majority over member argmax labels, else the fallback member's
/// label. Distribution is the renormalized mean of member distributions.
Prediction ensemble_predict(const std::map<std::string, Prediction>& per_member,
                            const EnsembleConfig& config, const LabelSchema& schema);

std::vector<LabelProb> top_k(const Prediction& prediction, std::size_t k,
                             const LabelSchema& schema);

// --- evaluation ---------------------------------------------------------------

struct LabelMetrics {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;  // gold count
};

struct ClassificationReport {
    std::string schema_id;
    std::vector<LabelMetrics> per_label;  // labels present in gold or pred
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    std::vector<std::string> matrix_labels;  // every schema label
    std::vector<std::vector<std::size_t>> confusion_matrix;  // [gold][pred]
};

ClassificationReport classification_report(const std::vector<std::string>& gold,
                                            const std::vector<std::string>& pred,
                                            const LabelSchema& schema);
std::string report_to_csv(const ClassificationReport& report);

// --- LLM verification ---------------------------------------------------------

enum class Verdict { Agree, Disagree };

struct Verification {
    std::string message_id;
    Verdict verdict = Verdict::Agree;
    std::string rationale;
};

/// Leading AGREE / DISAGREE token, ignoring leading whitespace and markup.
std::optional<Verdict> parse_verdict(std::string_view reply);

/// Template must bind {message} and {label}. One chat call per message, plus
/// one retry when the reply carries no verdict token.
std::vector<Verification> llm_verify(const std::vector<MessageRecord>& messages,
                                     const std::vector<Prediction>& predictions,
                                     const std::string& template_body, LmGateway& gateway,
                                     const std::string& provider_id);

// --- JSON ---------------------------------------------------------------------

void to_json(nlohmann::json& j, const LabelSchema& s);
void to_json(nlohmann::json& j, const LabelProb& p);
void to_json(nlohmann::json& j, const Prediction& p);
void from_json(const nlohmann::json& j, Prediction& p);
void to_json(nlohmann::json& j, const ClassificationReport& r);
void to_json(nlohmann::json& j, const Verification& v);

}  // namespace toxiscope

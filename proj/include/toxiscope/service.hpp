#pragma once

#include "toxiscope/assistant.hpp"
#include "toxiscope/classify.hpp"
#include "toxiscope/config.hpp"
#include "toxiscope/error.hpp"
#include "toxiscope/jobs.hpp"
#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/store.hpp"
#include "toxiscope/summarize.hpp"

#include "json.hpp"

#include <functional>
#include <memory>
#include <string>

namespace toxiscope {

/// Every capability behind one facade. Handlers take and return JSON so the
/// HTTP routes and the CLI share them.
class Service {
public:
    explicit Service(AppConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    const AppConfig& config() const { return config_; }
    Store& store() { return *store_; }
    LmGateway& gateway() { return gateway_; }
    SchemaRegistry& schemas() { return schemas_; }
    ClassifierRegistry& classifiers() { return classifiers_; }
    JobManager& jobs() { return *jobs_; }
    Assistant& assistant() { return *assistant_; }

    nlohmann::json health() const;
    nlohmann::json config_json() const;

    // datasets
    nlohmann::json ingest(const std::string& name, std::string_view raw, DataFormat format);
    nlohmann::json list_datasets() const;
    nlohmann::json describe_dataset(const std::string& dataset_id) const;
    void delete_dataset(const std::string& dataset_id);
    nlohmann::json conversation(const std::string& dataset_id, const std::string& key) const;
    std::string export_dataset(const std::string& dataset_id, DataFormat format) const;

    // analyses; `ctx` (when given) receives progress and is polled for cancellation
    nlohmann::json classify(const nlohmann::json& params, JobContext* ctx = nullptr);
    ClassificationReport evaluate(const nlohmann::json& params);
    nlohmann::json classify_report(const nlohmann::json& params);
    nlohmann::json ppl_gain(const nlohmann::json& params, JobContext* ctx = nullptr);
    nlohmann::json summarize(const nlohmann::json& params, JobContext* ctx = nullptr);
    nlohmann::json persona(const std::string& speaker, const nlohmann::json& params);
    nlohmann::json personas(const nlohmann::json& params, JobContext* ctx = nullptr);
    nlohmann::json stored_summaries(const std::string& dataset_id) const;

    // jobs
    nlohmann::json submit_job(const std::string& kind, const nlohmann::json& params);
    nlohmann::json job(const std::string& job_id) const;
    nlohmann::json cancel_job(const std::string& job_id);
    nlohmann::json list_jobs() const;

    // assistant
    nlohmann::json create_session(const nlohmann::json& params);
    nlohmann::json session(const std::string& session_id) const;
    /// Validates the request and returns the resolved provider and input
    /// before any streaming starts.
    std::pair<std::string, MessageInput> prepare_message(const std::string& session_id,
                                                         const nlohmann::json& params) const;
    std::string send_message(const std::string& session_id, const nlohmann::json& params,
                             const DeltaSink& sink = {});
    nlohmann::json import_session(const nlohmann::json& document);

    std::string provider_for(const nlohmann::json& params, const std::string& key,
                             const std::string& fallback, Capability needed) const;

private:
    LabelMap labels_for(const nlohmann::json& params, const std::string& dataset_id) const;
    std::set<std::string> negative_labels(const nlohmann::json& params) const;
    std::vector<Prediction> stored_predictions(const std::string& dataset_id,
                                               const std::string& classifier_id,
                                               const std::string& schema_id) const;
    void validate_job(JobKind kind, const nlohmann::json& params) const;

    AppConfig config_;
    std::unique_ptr<Store> store_;
    LmGateway gateway_;
    SchemaRegistry schemas_;
    ClassifierRegistry classifiers_;
    std::unique_ptr<Assistant> assistant_;
    std::unique_ptr<JobManager> jobs_;
};

/// HTTP status for an error code.
int http_status(ErrorCode code);
nlohmann::json error_json(const std::exception& e);

}  // namespace toxiscope

#pragma once

#include "toxiscope/chunker.hpp"
#include "toxiscope/classify.hpp"
#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/store.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace toxiscope {

struct ClassifierConfig {
    std::string classifier_id;
    std::string type = "stub";  // stub | http
    std::string url;
    std::vector<std::string> schema_ids;
    int timeout_seconds = 30;
};

struct BenchmarkConfig {
    std::string name;
    std::string path;
    DataFormat format = DataFormat::Csv;
};

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t workers = 0;  // 0 = hardware concurrency
    std::size_t queue_capacity = 64;
    bool job_cache = true;
    std::size_t summary_parallelism = 2;
};

struct Defaults {
    std::string chat_provider;
    std::string embed_provider;
    std::string score_provider;
    std::string classifier;
    std::string schema = "edos_binary";
};

struct AppConfig {
    std::string store_path = ":memory:";
    std::optional<std::string> columns_file;
    std::optional<std::string> schemas_file;
    std::string template_dir;
    ServerConfig server;
    Defaults defaults;
    ChunkerParams chunker;
    std::vector<ProviderSpec> providers;
    std::vector<ClassifierConfig> classifiers;
    std::vector<EnsembleConfig> ensembles;
    std::vector<BenchmarkConfig> benchmarks;
};

/// INI with sections [store], [server], [defaults], [chunker],
/// [provider.<id>], [classifier.<id>], [ensemble.<id>], [benchmark.<name>].
/// Relative paths resolve against `base_dir`.
AppConfig parse_config(const std::string& ini_text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

/// A JSON array of {schema_id, labels, negative_label?, parent_schema_id?, parent_map?}.
std::vector<LabelSchema> load_schemas(const std::filesystem::path& path);
LabelSchema schema_from_json(const nlohmann::json& j);

/// Secret-free view of the configuration.
nlohmann::json to_json(const AppConfig& config);

}  // namespace toxiscope

#include "toxiscope/config.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <sstream>

namespace toxiscope {

namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

std::vector<std::string> list_value(const std::string& raw) {
    std::vector<std::string> out;
    for (const auto& part : split(raw, ',')) {
        auto item = trim(part);
        if (!item.empty()) out.emplace_back(item);
    }
    return out;
}

template <typename T>
T get(const pt::ptree& section, const std::string& section_name, const std::string& key,
      T fallback) {
    try {
        return section.get<T>(key, fallback);
    } catch (const pt::ptree_error&) {
        fail(ErrorCode::ValidationError,
             "[" + section_name + "] " + key + ": bad value '" + section.get<std::string>(key) + "'");
    }
}

std::string resolve(const std::filesystem::path& base, const std::string& path) {
    if (path.empty() || path == ":memory:") return path;
    std::filesystem::path p(path);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.string();
}

bool has_prefix(const std::string& s, const std::string& prefix, std::string& rest) {
    if (s.rfind(prefix, 0) != 0 || s.size() == prefix.size()) return false;
    rest = s.substr(prefix.size());
    return true;
}

}  // namespace

AppConfig parse_config(const std::string& ini_text, const std::filesystem::path& base_dir) {
    pt::ptree tree;
    std::istringstream in(ini_text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        fail(ErrorCode::ValidationError, std::string("config: ") + e.what());
    }

    AppConfig config;
    config.template_dir = (std::filesystem::path(TOXISCOPE_RESOURCE_DIR) / "templates").string();
    for (const auto& [name, section] : tree) {
        std::string id;
        if (name == "store") {
            config.store_path = resolve(base_dir, get<std::string>(section, name, "path", ":memory:"));
            if (auto f = section.get_optional<std::string>("columns_file"))
                config.columns_file = resolve(base_dir, *f);
            if (auto f = section.get_optional<std::string>("schemas_file"))
                config.schemas_file = resolve(base_dir, *f);
            if (auto d = section.get_optional<std::string>("template_dir"))
                config.template_dir = resolve(base_dir, *d);
        } else if (name == "server") {
            auto& s = config.server;
            s.host = get<std::string>(section, name, "host", s.host);
            s.port = get<int>(section, name, "port", s.port);
            s.workers = get<std::size_t>(section, name, "workers", s.workers);
            s.queue_capacity = get<std::size_t>(section, name, "queue_capacity", s.queue_capacity);
            s.job_cache = get<bool>(section, name, "job_cache", s.job_cache);
            s.summary_parallelism =
                get<std::size_t>(section, name, "summary_parallelism", s.summary_parallelism);
        } else if (name == "defaults") {
            auto& d = config.defaults;
            d.chat_provider = get<std::string>(section, name, "chat_provider", d.chat_provider);
            d.embed_provider = get<std::string>(section, name, "embed_provider", d.embed_provider);
            d.score_provider = get<std::string>(section, name, "score_provider", d.score_provider);
            d.classifier = get<std::string>(section, name, "classifier", d.classifier);
            d.schema = get<std::string>(section, name, "schema", d.schema);
        } else if (name == "chunker") {
            auto& c = config.chunker;
            c.window = get<std::size_t>(section, name, "window", c.window);
            c.percentile = get<double>(section, name, "percentile", c.percentile);
            c.min_chunk_size = get<std::size_t>(section, name, "min_chunk_size", c.min_chunk_size);
            c.merge_threshold = get<double>(section, name, "merge_threshold", c.merge_threshold);
            validate_chunker_params(c);
        } else if (has_prefix(name, "provider.", id)) {
            ProviderSpec p;
            p.provider_id = id;
            p.base_url = get<std::string>(section, name, "base_url", "");
            p.model_name = get<std::string>(section, name, "model", "");
            p.auth_env_var = get<std::string>(section, name, "auth_env", "");
            for (const auto& c : list_value(get<std::string>(section, name, "capabilities", "chat")))
                p.capabilities.insert(parse_capability(c));
            p.max_parallel = get<std::size_t>(section, name, "max_parallel", p.max_parallel);
            p.max_retries = get<std::size_t>(section, name, "max_retries", p.max_retries);
            p.backoff_ms = get<int>(section, name, "backoff_ms", p.backoff_ms);
            p.timeout_seconds = get<int>(section, name, "timeout_seconds", p.timeout_seconds);
            p.logprob_base = get<double>(section, name, "logprob_base", p.logprob_base);
            validate_provider(p);
            config.providers.push_back(std::move(p));
        } else if (has_prefix(name, "classifier.", id)) {
            ClassifierConfig c;
            c.classifier_id = id;
            c.type = to_lower(get<std::string>(section, name, "type", c.type));
            c.url = get<std::string>(section, name, "url", "");
            c.schema_ids = list_value(get<std::string>(section, name, "schemas", ""));
            c.timeout_seconds = get<int>(section, name, "timeout_seconds", c.timeout_seconds);
            if (c.type != "stub" && c.type != "http")
                fail(ErrorCode::ValidationError, "[" + name + "] type must be stub or http");
            if (c.type == "http" && c.url.empty())
                fail(ErrorCode::ValidationError, "[" + name + "] http classifier needs url");
            if (c.schema_ids.empty())
                fail(ErrorCode::ValidationError, "[" + name + "] schemas is empty");
            config.classifiers.push_back(std::move(c));
        } else if (has_prefix(name, "ensemble.", id)) {
            EnsembleConfig e{id, list_value(get<std::string>(section, name, "members", "")),
                             get<std::string>(section, name, "fallback", "")};
            validate_ensemble(e);
            config.ensembles.push_back(std::move(e));
        } else if (has_prefix(name, "benchmark.", id)) {
            BenchmarkConfig b{id, resolve(base_dir, get<std::string>(section, name, "path", "")),
                              parse_format(get<std::string>(section, name, "format", "csv"))};
            if (b.path.empty()) fail(ErrorCode::ValidationError, "[" + name + "] path is empty");
            config.benchmarks.push_back(std::move(b));
        } else if (name == "columns") {
            // inline synonyms are read by ColumnSynonyms::load
        } else {
            fail(ErrorCode::ValidationError, "config: unknown section [" + name + "]");
        }
    }
    return config;
}

AppConfig load_config(const std::filesystem::path& path) {
    auto config = parse_config(read_file(path), path.parent_path());
    if (!config.columns_file) {
        std::istringstream in(read_file(path));
        pt::ptree tree;
        pt::read_ini(in, tree);
        if (tree.count("columns")) config.columns_file = path.string();
    }
    return config;
}

LabelSchema schema_from_json(const json& j) {
    try {
        LabelSchema s;
        s.schema_id = j.at("schema_id").get<std::string>();
        s.labels = j.at("labels").get<std::vector<std::string>>();
        if (j.contains("negative_label") && !j["negative_label"].is_null())
            s.negative_label = j["negative_label"].get<std::string>();
        if (j.contains("parent_schema_id") && !j["parent_schema_id"].is_null())
            s.parent_schema_id = j["parent_schema_id"].get<std::string>();
        if (j.contains("parent_map") && !j["parent_map"].is_null())
            s.parent_map = j["parent_map"].get<std::map<std::string, std::string>>();
        return s;
    } catch (const json::exception& e) {
        fail(ErrorCode::ValidationError, std::string("schema: ") + e.what());
    }
}

std::vector<LabelSchema> load_schemas(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ValidationError, path.string() + ": " + e.what());
    }
    if (!doc.is_array()) fail(ErrorCode::ValidationError, path.string() + ": expected an array");
    std::vector<LabelSchema> out;
    for (const auto& j : doc) out.push_back(schema_from_json(j));
    return out;
}

json to_json(const AppConfig& config) {
    json providers = json::array();
    for (const auto& p : config.providers) {
        std::vector<std::string> caps;
        for (auto c : p.capabilities) caps.emplace_back(to_string(c));
        providers.push_back({{"provider_id", p.provider_id},
                             {"base_url", p.base_url},
                             {"model", p.model_name},
                             {"auth_env", p.auth_env_var},
                             {"capabilities", caps},
                             {"max_parallel", p.max_parallel},
                             {"max_retries", p.max_retries}});
    }
    json classifiers = json::array();
    for (const auto& c : config.classifiers)
        classifiers.push_back({{"classifier_id", c.classifier_id},
                               {"type", c.type},
                               {"url", c.url},
                               {"schemas", c.schema_ids}});
    json ensembles = json::array();
    for (const auto& e : config.ensembles)
        ensembles.push_back(
            {{"ensemble_id", e.ensemble_id}, {"members", e.member_ids}, {"fallback", e.fallback_id}});
    return {{"providers", providers},
            {"classifiers", classifiers},
            {"ensembles", ensembles},
            {"chunker",
             {{"window", config.chunker.window},
              {"percentile", config.chunker.percentile},
              {"min_chunk_size", config.chunker.min_chunk_size},
              {"merge_threshold", config.chunker.merge_threshold}}},
            {"defaults",
             {{"chat_provider", config.defaults.chat_provider},
              {"embed_provider", config.defaults.embed_provider},
              {"score_provider", config.defaults.score_provider},
              {"classifier", config.defaults.classifier},
              {"schema", config.defaults.schema}}},
            {"server",
             {{"workers", config.server.workers},
              {"queue_capacity", config.server.queue_capacity},
              {"job_cache", config.server.job_cache}}}};
}

}  // namespace toxiscope

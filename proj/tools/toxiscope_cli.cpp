// Command-line front end. Each verb calls the same Service handlers as the
// HTTP API.

#include "toxiscope/error.hpp"
#include "toxiscope/http_server.hpp"
#include "toxiscope/service.hpp"
#include "toxiscope/util.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>

using namespace toxiscope;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::string store_path;
    std::string input;
    std::string input_format;
    std::string dataset;
    std::string log_level = "warn";
};

AppConfig make_config(const Common& c) {
    AppConfig config = c.config_path.empty() ? AppConfig{} : load_config(c.config_path);
    if (c.config_path.empty())
        config.template_dir = (std::filesystem::path(TOXISCOPE_RESOURCE_DIR) / "templates").string();
    if (!c.store_path.empty()) config.store_path = c.store_path;
    return config;
}

DataFormat guess_format(const std::string& path, const std::string& explicit_format) {
    if (!explicit_format.empty()) return parse_format(explicit_format);
    return path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl" ? DataFormat::Jsonl
                                                                        : DataFormat::Csv;
}

// --input ingests a file for this run; otherwise --dataset names a stored one.
std::string dataset_for(Service& svc, const Common& c) {
    if (!c.input.empty()) {
        auto d = svc.ingest(std::filesystem::path(c.input).filename().string(), read_file(c.input),
                            guess_format(c.input, c.input_format));
        spdlog::info("ingested {} as {}", c.input, d["dataset_id"].get<std::string>());
        return d["dataset_id"];
    }
    if (c.dataset.empty()) fail(ErrorCode::ValidationError, "give --dataset or --input");
    return c.dataset;
}

void emit(const json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream(out_path) << j.dump(2) << "\n";
}

void put_if(json& j, const std::string& key, const std::string& value) {
    if (!value.empty()) j[key] = value;
}

HttpServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toxiscope: toxic-content analysis service and tools"};
    app.require_subcommand(1);
    Common common;
    app.add_option("-c,--config", common.config_path, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--store", common.store_path, "SQLite store path (overrides the config)");
    app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error");

    auto add_data_options = [&](CLI::App* cmd) {
        cmd->add_option("-d,--dataset", common.dataset, "stored dataset id");
        cmd->add_option("-i,--input", common.input, "CSV or JSONL file to ingest first")
            ->check(CLI::ExistingFile);
        cmd->add_option("--format", common.input_format, "csv|jsonl (default: by extension)");
    };
    std::string out_path, provider, classifier, schema, conversation, speaker;

    auto* serve = app.add_subcommand("serve", "run the HTTP API");
    std::string host;
    int port = -1;
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port (0 = any)");

    auto* ingest = app.add_subcommand("ingest", "load a dataset into the store");
    std::string ingest_file, ingest_name;
    ingest->add_option("file", ingest_file, "CSV or JSONL file")->required()->check(CLI::ExistingFile);
    ingest->add_option("--name", ingest_name, "dataset name");
    ingest->add_option("--format", common.input_format, "csv|jsonl");

    auto* classify_cmd = app.add_subcommand("classify", "classify every message of a dataset");
    add_data_options(classify_cmd);
    std::size_t k = 0;
    classify_cmd->add_option("--classifier", classifier, "classifier or ensemble id");
    classify_cmd->add_option("--schema", schema, "label schema id");
    classify_cmd->add_option("--top-k", k, "also report the k most likely labels");
    classify_cmd->add_option("-o,--out", out_path, "write JSON here instead of stdout");

    auto* eval = app.add_subcommand("eval", "precision/recall/F1 against gold labels");
    add_data_options(eval);
    bool csv = false;
    eval->add_option("--classifier", classifier, "classifier or ensemble id");
    eval->add_option("--schema", schema, "label schema id");
    eval->add_flag("--csv", csv, "emit the per-label table as CSV");
    eval->add_option("-o,--out", out_path, "output file");

    auto* ppl = app.add_subcommand("ppl-gain", "perplexity-gain attribution for one conversation");
    add_data_options(ppl);
    std::string output_text, granularity = "message";
    ppl->add_option("--conversation", conversation, "conversation key")->required();
    ppl->add_option("--output", output_text, "the model output Y to attribute")->required();
    ppl->add_option("--granularity", granularity, "message|sentence");
    ppl->add_option("--provider", provider, "provider with logprobs");
    ppl->add_option("-o,--out", out_path, "output file");

    auto* summ = app.add_subcommand("summarize", "toxic-aware per-speaker summaries");
    add_data_options(summ);
    std::string embed_provider;
    summ->add_option("--conversation", conversation, "only this conversation");
    summ->add_option("--provider", provider, "chat provider");
    summ->add_option("--embed-provider", embed_provider, "embedding provider");
    summ->add_option("--classifier", classifier, "condition on this classifier's labels");
    summ->add_option("--schema", schema, "schema of those labels");
    summ->add_option("-o,--out", out_path, "output file");

    auto* pers = app.add_subcommand("persona", "Big-Five profile of a speaker");
    add_data_options(pers);
    pers->add_option("--speaker", speaker, "speaker name")->required();
    pers->add_option("--provider", provider, "chat provider");
    pers->add_option("--summarize", conversation,
                     "summarize this conversation first (use 'all' for every conversation)");
    pers->add_option("-o,--out", out_path, "output file");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(common.log_level));

    try {
        Service svc(make_config(common));

        if (*serve) {
            HttpServer server(svc);
            auto h = host.empty() ? svc.config().server.host : host;
            auto p = port >= 0 ? port : svc.config().server.port;
            int bound = server.bind(h, p);
            std::cout << "listening on http://" << h << ":" << bound << "/v1" << std::endl;
            g_server = &server;
            std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
            std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
            server.listen();
            g_server = nullptr;
            return 0;
        }
        if (*ingest) {
            auto name = ingest_name.empty() ? std::filesystem::path(ingest_file).filename().string()
                                            : ingest_name;
            emit(svc.ingest(name, read_file(ingest_file), guess_format(ingest_file, common.input_format)),
                 "");
            return 0;
        }

        const auto dataset_id = dataset_for(svc, common);
        json params = {{"dataset_id", dataset_id}};
        put_if(params, "provider", provider);

        if (*classify_cmd) {
            put_if(params, "classifier_id", classifier);
            put_if(params, "schema_id", schema);
            if (k) params["top_k"] = k;
            emit(svc.classify(params), out_path);
        } else if (*eval) {
            put_if(params, "classifier_id", classifier);
            put_if(params, "schema_id", schema);
            auto report = svc.evaluate(params);
            if (csv) {
                auto text = report_to_csv(report);
                if (out_path.empty())
                    std::cout << text;
                else
                    std::ofstream(out_path) << text;
            } else {
                emit(json(report), out_path);
            }
        } else if (*ppl) {
            params["conversation_key"] = conversation;
            params["output"] = output_text;
            params["granularity"] = granularity;
            emit(svc.ppl_gain(params), out_path);
        } else if (*summ) {
            put_if(params, "conversation_key", conversation);
            put_if(params, "embed_provider", embed_provider);
            if (!classifier.empty()) {
                auto s = schema.empty() ? svc.config().defaults.schema : schema;
                svc.classify({{"dataset_id", dataset_id}, {"classifier_id", classifier}, {"schema_id", s}});
                params["predictions"] = {{"classifier_id", classifier}, {"schema_id", s}};
            }
            emit(svc.summarize(params), out_path);
        } else if (*pers) {
            if (!conversation.empty()) {
                json sp = params;
                if (conversation != "all") sp["conversation_key"] = conversation;
                svc.summarize(sp);
            }
            emit(svc.persona(speaker, params), out_path);
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

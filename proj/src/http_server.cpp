#include "toxiscope/http_server.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include "httplib.h"

#include <spdlog/spdlog.h>

namespace toxiscope {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::exception& e) {
    int status = 500;
    if (auto* te = dynamic_cast<const Error*>(&e))
        status = http_status(te->code());
    else if (dynamic_cast<const json::exception*>(&e))
        status = 400;
    send_json(res, error_json(e), status);
}

json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ValidationError, std::string("request body is not JSON: ") + e.what());
    }
}

template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const std::exception& e) {
            send_error(res, e);
        }
    };
}

DataFormat format_from(const std::string& explicit_format, const std::string& filename) {
    if (!explicit_format.empty()) return parse_format(explicit_format);
    auto lower = to_lower(filename);
    if (lower.size() >= 6 && lower.substr(lower.size() - 6) == ".jsonl") return DataFormat::Jsonl;
    return DataFormat::Csv;
}

std::string sse(const json& data, const std::string& event = {}) {
    std::string out;
    if (!event.empty()) out += "event: " + event + "\n";
    return out + "data: " + data.dump() + "\n\n";
}

}  // namespace

HttpServer::HttpServer(Service& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
    routes();
}

HttpServer::~HttpServer() { stop(); }

std::string HttpServer::base_url() const {
    return "http://" + host_ + ":" + std::to_string(port_) + "/v1";
}

int HttpServer::bind(const std::string& host, int port) {
    host_ = host;
    port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (port_ < 0) fail(ErrorCode::PreconditionViolation, "cannot bind " + host + ":" + std::to_string(port));
    return port_;
}

void HttpServer::listen() { server_->listen_after_bind(); }

int HttpServer::start(const std::string& host, int port) {
    bind(host, port);
    thread_ = std::thread([this] { listen(); });
    server_->wait_until_ready();
    return port_;
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

void HttpServer::routes() {
    auto& s = *server_;
    Service& svc = service_;

    s.Get("/v1/health", guarded([&svc](const auto&, auto& res) { send_json(res, svc.health()); }));
    s.Get("/v1/config", guarded([&svc](const auto&, auto& res) { send_json(res, svc.config_json()); }));

    // datasets
    s.Post("/v1/datasets", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        std::string name, raw, format;
        if (req.is_multipart_form_data()) {
            if (!req.has_file("file"))
                fail(ErrorCode::ValidationError, "multipart upload needs a 'file' part");
            const auto file = req.get_file_value("file");
            raw = file.content;
            name = req.has_file("name") ? req.get_file_value("name").content : file.filename;
            if (req.has_file("format")) format = req.get_file_value("format").content;
            if (format.empty()) format = format_from("", file.filename) == DataFormat::Jsonl ? "jsonl" : "csv";
        } else {
            auto body = body_json(req);
            if (!body.contains("content") || !body["content"].is_string())
                fail(ErrorCode::ValidationError, "'content' must hold the raw file text");
            raw = body["content"].get<std::string>();
            name = body.value("name", std::string("upload"));
            format = body.value("format", std::string());
        }
        if (name.empty()) name = "upload";
        send_json(res, svc.ingest(name, raw, format_from(format, name)), 201);
    }));
    s.Get("/v1/datasets", guarded([&svc](const auto&, auto& res) { send_json(res, svc.list_datasets()); }));
    s.Get(R"(/v1/datasets/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.describe_dataset(req.matches[1]));
    }));
    s.Delete(R"(/v1/datasets/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
        svc.delete_dataset(req.matches[1]);
        send_json(res, {{"deleted", req.matches[1].str()}});
    }));
    s.Get(R"(/v1/datasets/([^/]+)/conversations/([^/]+))",
          guarded([&svc](const httplib::Request& req, auto& res) {
              send_json(res, svc.conversation(req.matches[1], req.matches[2]));
          }));
    s.Get(R"(/v1/datasets/([^/]+)/export)", guarded([&svc](const httplib::Request& req, auto& res) {
        auto fmt = parse_format(req.has_param("format") ? req.get_param_value("format") : "jsonl");
        res.set_content(svc.export_dataset(req.matches[1], fmt),
                        fmt == DataFormat::Csv ? "text/csv" : "application/x-ndjson");
    }));
    s.Get(R"(/v1/datasets/([^/]+)/summaries)", guarded([&svc](const httplib::Request& req, auto& res) {
        svc.store().describe(req.matches[1]);
        send_json(res, svc.stored_summaries(req.matches[1]));
    }));

    // classification
    s.Post("/v1/classify", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.classify(body_json(req)));
    }));
    s.Post("/v1/classify/report", guarded([&svc](const httplib::Request& req, auto& res) {
        auto body = body_json(req);
        auto report = svc.evaluate(body);
        bool csv = (req.has_param("format") && req.get_param_value("format") == "csv") ||
                   body.value("format", std::string()) == "csv";
        if (csv)
            res.set_content(report_to_csv(report), "text/csv");
        else
            send_json(res, json(report));
    }));

    // jobs
    s.Post(R"(/v1/jobs/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.submit_job(req.matches[1], body_json(req)), 202);
    }));
    s.Get("/v1/jobs", guarded([&svc](const auto&, auto& res) { send_json(res, svc.list_jobs()); }));
    s.Get(R"(/v1/jobs/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.job(req.matches[1]));
    }));
    s.Delete(R"(/v1/jobs/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.cancel_job(req.matches[1]));
    }));

    // conversation analyses
    s.Post("/v1/ppl-gain", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.ppl_gain(body_json(req)));
    }));
    s.Post(R"(/v1/persona/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.persona(req.matches[1], body_json(req)));
    }));

    // assistant
    s.Post("/v1/assistant/sessions", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.create_session(body_json(req)), 201);
    }));
    s.Post("/v1/assistant/sessions/import", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.import_session(body_json(req)), 201);
    }));
    s.Get(R"(/v1/assistant/sessions/([^/]+))", guarded([&svc](const httplib::Request& req, auto& res) {
        send_json(res, svc.session(req.matches[1]));
    }));
    s.Get(R"(/v1/assistant/sessions/([^/]+)/export)",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
              std::string id = req.matches[1];
              auto fmt = req.has_param("format") ? req.get_param_value("format") : "json";
              if (fmt == "txt") {
                  res.set_content(svc.assistant().export_text(id), "text/plain");
                  res.set_header("Content-Disposition", "attachment; filename=\"" + id + ".txt\"");
              } else if (fmt == "json") {
                  res.set_content(svc.assistant().export_json(id).dump(2), "application/json");
                  res.set_header("Content-Disposition", "attachment; filename=\"" + id + ".json\"");
              } else {
                  fail(ErrorCode::ValidationError, "export format must be txt or json");
              }
          }));
    s.Post(R"(/v1/assistant/sessions/([^/]+)/messages)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               const auto body = body_json(req);
               // fail fast with a normal HTTP error before the stream opens
               svc.prepare_message(id, body);
               bool want_sse = !(req.get_header_value("Accept") == "application/json" ||
                                 body.value("stream", true) == false);
               if (!want_sse) {
                   send_json(res, {{"session_id", id}, {"reply", svc.send_message(id, body)}});
                   return;
               }
               res.set_header("Cache-Control", "no-cache");
               res.set_chunked_content_provider(
                   "text/event-stream", [&svc, id, body](std::size_t, httplib::DataSink& sink) {
                       try {
                           auto reply = svc.send_message(id, body, [&sink](std::string_view d) {
                               auto chunk = sse({{"delta", std::string(d)}});
                               sink.write(chunk.data(), chunk.size());
                           });
                           auto done = sse({{"session_id", id}, {"reply", reply}}, "done");
                           sink.write(done.data(), done.size());
                       } catch (const std::exception& e) {
                           auto err = sse(error_json(e), "error");
                           sink.write(err.data(), err.size());
                       }
                       sink.done();
                       return true;
                   });
           }));

    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            send_error(res, e);
        } catch (...) {
            send_json(res, {{"error", {{"code", "Internal"}, {"message", "unknown error"}}}}, 500);
        }
    });
    s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
        spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });
}

}  // namespace toxiscope

#pragma once

#include "toxiscope/service.hpp"

#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace toxiscope {

/// The /v1 JSON API over a Service.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// port 0 picks a free port; returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    /// bind + listen on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();

    int port() const { return port_; }
    std::string base_url() const;

private:
    void routes();

    Service& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::string host_ = "127.0.0.1";
    int port_ = 0;
};

}  // namespace toxiscope

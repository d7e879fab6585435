// Standalone OpenAI-compatible stand-in for demos and offline runs.

#include "toxiscope/mock_lm.hpp"

#include "CLI11.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

namespace {
std::atomic<bool> g_stop{false};
}

int main(int argc, char** argv) {
    CLI::App app{"toxiscope-mock-lm: deterministic OpenAI-compatible endpoint"};
    std::string host = "127.0.0.1", fixtures;
    int port = 11435, latency = 0;
    app.add_option("--host", host, "bind address");
    app.add_option("--port", port, "port (0 = any)");
    app.add_option("--fixtures", fixtures, "JSON fixture file")->check(CLI::ExistingFile);
    app.add_option("--latency-ms", latency, "delay added to every request");
    CLI11_PARSE(app, argc, argv);

    try {
        toxiscope::MockLmServer server(host, port);
        if (!fixtures.empty()) server.load_fixtures(fixtures);
        server.set_latency_ms(latency);
        std::cout << "mock LM at " << server.base_url() << std::endl;
        std::signal(SIGINT, [](int) { g_stop = true; });
        std::signal(SIGTERM, [](int) { g_stop = true; });
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        spdlog::info("served {} requests", server.total_calls());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

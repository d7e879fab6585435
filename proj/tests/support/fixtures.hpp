#pragma once

#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/mock_lm.hpp"
#include "toxiscope/store.hpp"

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace fixtures {

inline toxiscope::ProviderSpec mock_provider(const toxiscope::MockLmServer& server,
                                             std::string id = "mock",
                                             std::set<toxiscope::Capability> caps = {
                                                 toxiscope::Capability::Chat,
                                                 toxiscope::Capability::Stream,
                                                 toxiscope::Capability::Logprobs,
                                                 toxiscope::Capability::Embeddings}) {
    toxiscope::ProviderSpec p;
    p.provider_id = std::move(id);
    p.base_url = server.base_url();
    p.model_name = "mock-model";
    p.capabilities = std::move(caps);
    p.backoff_ms = 1;
    p.timeout_seconds = 10;
    return p;
}

// Turns given as (speaker, text); ids m1.., turn_index 0..
inline toxiscope::ConversationRecord conversation(
    const std::vector<std::pair<std::string, std::string>>& turns, std::string key = "c1") {
    std::vector<toxiscope::MessageRecord> records;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        toxiscope::MessageRecord r;
        r.id = "m" + std::to_string(i + 1);
        r.text = turns[i].second;
        r.conversation_key = key;
        if (!turns[i].first.empty()) r.speaker = turns[i].first;
        r.turn_index = i;
        records.push_back(std::move(r));
    }
    return toxiscope::make_conversation(std::move(key), std::move(records));
}

inline std::filesystem::path resource(const std::string& relative) {
    return std::filesystem::path(TOXISCOPE_RESOURCE_DIR) / relative;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("toxiscope-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace fixtures

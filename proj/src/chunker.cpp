#include "toxiscope/chunker.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/ppl_gain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace toxiscope {

using nlohmann::json;

void validate_chunker_params(const ChunkerParams& params) {
    if (!(params.percentile > 0.0 && params.percentile <= 100.0))
        fail(ErrorCode::ValidationError, "percentile must be in (0, 100]");
    if (params.min_chunk_size < 1) fail(ErrorCode::ValidationError, "min_chunk_size must be >= 1");
    if (!(params.merge_threshold > 0.0 && params.merge_threshold <= 1.0))
        fail(ErrorCode::ValidationError, "merge_threshold must be in (0, 1]");
}

std::vector<std::string> turn_contexts(const ConversationRecord& conversation,
                                       std::size_t window) {
    const auto& turns = conversation.turns;
    std::vector<std::string> out;
    out.reserve(turns.size());
    for (std::size_t i = 0; i < turns.size(); ++i) {
        std::size_t lo = i >= window ? i - window : 0;
        std::size_t hi = std::min(turns.size() - 1, i + window);
        std::string ctx;
        for (std::size_t k = lo; k <= hi; ++k) {
            if (k > lo) ctx.push_back('\n');
            ctx += speaker_prefix(turns[k]) + turns[k].text;
        }
        out.push_back(std::move(ctx));
    }
    return out;
}

std::vector<double> distances_from_embeddings(std::span<const std::vector<double>> embeddings) {
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < embeddings.size(); ++i)
        out.push_back(std::clamp(1.0 - dot(embeddings[i], embeddings[i + 1]), 0.0, 2.0));
    return out;
}

std::vector<double> distance_series(const ConversationRecord& conversation, LmGateway& gateway,
                                    const std::string& provider_id, std::size_t window) {
    if (conversation.turns.size() < 2)
        fail(ErrorCode::PreconditionViolation, "distance series needs at least two turns");
    auto embeddings = gateway.embed(provider_id, turn_contexts(conversation, window));
    return distances_from_embeddings(embeddings);
}

double nearest_rank_percentile(std::span<const double> values, double p) {
    if (values.empty()) fail(ErrorCode::PreconditionViolation, "no values");
    if (!(p > 0.0 && p <= 100.0)) fail(ErrorCode::PreconditionViolation, "percentile outside (0,100]");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size()) / 100.0 - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

std::vector<std::size_t> detect_breakpoints(std::span<const double> distances, double percentile,
                                            std::size_t min_chunk_size) {
    if (distances.empty()) fail(ErrorCode::PreconditionViolation, "no distances");
    if (min_chunk_size < 1) fail(ErrorCode::PreconditionViolation, "min_chunk_size must be >= 1");
    const double threshold = nearest_rank_percentile(distances, percentile);
    const std::size_t n_turns = distances.size() + 1;

    std::vector<std::size_t> cuts;
    std::size_t chunk_start = 0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        if (!(distances[i] > threshold)) continue;
        std::size_t left = i + 1 - chunk_start;
        std::size_t right = n_turns - (i + 1);
        if (left < min_chunk_size || right < min_chunk_size) continue;
        cuts.push_back(i);
        chunk_start = i + 1;
    }
    return cuts;
}

namespace {

std::vector<double> mean_direction(const std::vector<const std::vector<double>*>& members) {
    std::vector<double> sum(members.front()->size(), 0.0);
    for (const auto* v : members)
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += (*v)[k];
    double norm = std::sqrt(std::inner_product(sum.begin(), sum.end(), sum.begin(), 0.0));
    if (!(norm > 1e-12)) return *members.front();
    for (double& x : sum) x /= norm;
    return sum;
}

}  // namespace

std::vector<Chunk> build_chunks(std::size_t n_turns, std::span<const std::size_t> breakpoints,
                                std::span<const std::vector<double>> embeddings) {
    if (n_turns == 0) fail(ErrorCode::EmptyConversation, "no turns to chunk");
    if (embeddings.size() != n_turns)
        fail(ErrorCode::PreconditionViolation, "one embedding per turn required");
    std::vector<Chunk> chunks;
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        std::vector<const std::vector<double>*> members;
        for (std::size_t k = start; k <= end; ++k) members.push_back(&embeddings[k]);
        chunks.push_back({"c" + std::to_string(chunks.size()), start, end, mean_direction(members)});
        start = end + 1;
    };
    for (auto b : breakpoints) {
        if (b + 1 >= n_turns || b < start)
            fail(ErrorCode::PreconditionViolation, "breakpoints must be increasing and inside");
        emit(b);
    }
    emit(n_turns - 1);
    return chunks;
}

std::vector<Chunk> chunk_conversation(const ConversationRecord& conversation, LmGateway& gateway,
                                      const std::string& provider_id,
                                      const ChunkerParams& params) {
    validate_chunker_params(params);
    const std::size_t n = conversation.turns.size();
    if (n == 0)
        fail(ErrorCode::EmptyConversation, "conversation '" + conversation.key + "' has no turns");
    auto embeddings = gateway.embed(provider_id, turn_contexts(conversation, params.window));
    std::vector<std::size_t> cuts;
    if (n >= 2)
        cuts = detect_breakpoints(distances_from_embeddings(embeddings), params.percentile,
                                  params.min_chunk_size);
    return build_chunks(n, cuts, embeddings);
}

std::vector<TopicGroup> regroup_topics(std::span<const Chunk> chunks, double merge_threshold) {
    if (!(merge_threshold > 0.0 && merge_threshold <= 1.0))
        fail(ErrorCode::ValidationError, "merge_threshold must be in (0, 1]");
    std::vector<const Chunk*> ordered;
    for (const auto& c : chunks) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const Chunk* a, const Chunk* b) { return a->start < b->start; });

    const std::size_t n = ordered.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto root = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (dot(ordered[i]->centroid, ordered[j]->centroid) >= merge_threshold - 1e-12) {
                auto a = root(i), b = root(j);
                // keep the earliest chunk as the representative
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }

    std::vector<TopicGroup> groups;
    std::vector<std::size_t> group_of_root(n, n);
    std::vector<std::vector<const std::vector<double>*>> centroids;
    for (std::size_t i = 0; i < n; ++i) {
        auto r = root(i);
        if (group_of_root[r] == n) {
            group_of_root[r] = groups.size();
            groups.push_back({"g" + std::to_string(groups.size()), {}, {}});
            centroids.emplace_back();
        }
        auto g = group_of_root[r];
        groups[g].member_chunk_ids.push_back(ordered[i]->chunk_id);
        centroids[g].push_back(&ordered[i]->centroid);
    }
    for (std::size_t g = 0; g < groups.size(); ++g)
        groups[g].group_centroid = mean_direction(centroids[g]);
    return groups;
}

json chunk_plan_json(std::span<const Chunk> chunks, std::span<const TopicGroup> groups) {
    json cj = json::array();
    for (const auto& c : chunks) cj.push_back({{"id", c.chunk_id}, {"start", c.start}, {"end", c.end}});
    json gj = json::array();
    for (const auto& g : groups) gj.push_back({{"id", g.group_id}, {"chunks", g.member_chunk_ids}});
    return {{"chunks", cj}, {"groups", gj}};
}

}  // namespace toxiscope

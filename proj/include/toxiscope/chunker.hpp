#pragma once

#include "toxiscope/lm_gateway.hpp"
#include "toxiscope/store.hpp"

#include "json.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace toxiscope {

struct ChunkerParams {
    std::size_t window = 1;
    double percentile = 95.0;
    std::size_t min_chunk_size = 2;
    double merge_threshold = 0.85;
};

void validate_chunker_params(const ChunkerParams& params);

struct Chunk {
    std::string chunk_id;
    std::size_t start = 0;  // inclusive, 0-based turn position
    std::size_t end = 0;    // inclusive
    std::vector<double> centroid;
};

struct TopicGroup {
    std::string group_id;
    std::vector<std::string> member_chunk_ids;  // ascending start
    std::vector<double> group_centroid;
};

/// Turn i's embedding input: speaker-prefixed turns [i-w, i+w] clipped to the
/// conversation, newline-joined.
std::vector<std::string> turn_contexts(const ConversationRecord& conversation, std::size_t window);

/// d_i = 1 - cos(e_i, e_{i+1}), clamped to [0, 2].
std::vector<double> distances_from_embeddings(std::span<const std::vector<double>> embeddings);

std::vector<double> distance_series(const ConversationRecord& conversation, LmGateway& gateway,
                                    const std::string& provider_id, std::size_t window);

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
double nearest_rank_percentile(std::span<const double> values, double p);

/// Indices i where the conversation is cut between turn i and i+1. Cuts need
/// d_i strictly above the percentile threshold; candidates that would leave a
/// chunk (on either side) shorter than min_chunk_size are dropped greedily
/// left to right.
std::vector<std::size_t> detect_breakpoints(std::span<const double> distances, double percentile,
                                            std::size_t min_chunk_size);

/// Contiguous chunks between breakpoints with renormalized mean centroids.
std::vector<Chunk> build_chunks(std::size_t n_turns, std::span<const std::size_t> breakpoints,
                                std::span<const std::vector<double>> embeddings);

std::vector<Chunk> chunk_conversation(const ConversationRecord& conversation, LmGateway& gateway,
                                      const std::string& provider_id,
                                      const ChunkerParams& params = {});

/// Single-linkage merge of chunks whose centroid cosine is >= threshold.
/// Groups are ordered by their earliest chunk.
std::vector<TopicGroup> regroup_topics(std::span<const Chunk> chunks, double merge_threshold);

nlohmann::json chunk_plan_json(std::span<const Chunk> chunks, std::span<const TopicGroup> groups);

}  // namespace toxiscope

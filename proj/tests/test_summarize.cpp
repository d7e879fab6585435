#include "doctest.h"

#include "support/fixtures.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/mock_lm.hpp"
#include "toxiscope/summarize.hpp"
#include "toxiscope/util.hpp"

#include <random>

using namespace toxiscope;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::ValidationError;
}

const std::string kTemplate = "S={speaker}\nC:\n{conversation}\nT:\n{toxic_messages}";

// six turns that the chunker splits into [0,2] and [3,5] with window 0
ConversationRecord two_topics(MockLmServer& mock) {
    auto conv = fixtures::conversation(
        {{"A", "cats"}, {"B", "cats"}, {"A", "cats"}, {"B", "you idiot"}, {"A", "dogs"}, {"B", "dogs"}});
    auto ctx = turn_contexts(conv, 0);
    for (std::size_t i = 0; i < ctx.size(); ++i)
        mock.set_embedding(ctx[i], i < 3 ? std::vector<double>{1, 0} : std::vector<double>{0, 1});
    return conv;
}

SummaryParams two_topic_params() {
    SummaryParams p;
    p.instruction_template = kTemplate;
    p.chunker.window = 0;
    p.chunker.percentile = 50;
    p.chunker.min_chunk_size = 2;
    p.negative_labels = {"none"};
    p.parallelism = 1;
    return p;
}

}  // namespace

TEST_CASE("prompt rendering") {
    auto conv = fixtures::conversation({{"A", "hello"}, {"B", "get lost"}});
    auto none = build_summary_prompt(conv.turns, {}, kTemplate, {"none"}, "A");
    CHECK(none == "S=A\nC:\nA: hello\nB: get lost\nT:\nnone");

    LabelMap labels{{"m1", "none"}, {"m2", "insult"}};
    auto flagged = build_summary_prompt(conv.turns, labels, kTemplate, {"none"});
    CHECK(contains(flagged, "T:\n1. [insult] B: get lost"));
    CHECK(contains(flagged, "S={speaker}"));  // left alone when no speaker is given

    CHECK(code_of([&] { build_summary_prompt(conv.turns, {}, "no slots", {}); }) ==
          ErrorCode::MissingPlaceholder);
    CHECK(code_of([&] { build_summary_prompt(conv.turns, {}, "{conversation}", {}); }) ==
          ErrorCode::MissingPlaceholder);

    auto shipped = default_summary_template();
    CHECK(contains(shipped, "{conversation}"));
    CHECK(contains(shipped, "{toxic_messages}"));
}

TEST_CASE("flagged ids follow the labels") {
    auto conv = fixtures::conversation({{"A", "x"}, {"B", "y"}, {"A", "z"}});
    LabelMap labels{{"m1", "threat"}, {"m2", "none"}, {"m3", "insult"}};
    CHECK(flagged_ids(conv.turns, labels, {"none"}) == std::vector<std::string>{"m1", "m3"});
    CHECK(flagged_ids(conv.turns, {}, {"none"}).empty());
}

TEST_CASE("one call per speaker and partial failure") {
    MockLmServer mock;
    LmGateway gw;
    auto spec = fixtures::mock_provider(mock);
    spec.max_retries = 0;
    gw.add_provider(spec);
    auto conv = fixtures::conversation({{"A", "hi"}, {"B", "bye"}, {"A", "again"}});
    Chunk all{"c0", 0, 2, {1.0}};
    SummaryParams params;
    params.instruction_template = kTemplate;

    mock.script_chat("  A was polite. ");
    mock.script_chat("B left.");
    auto ok = summarize_chunk(conv, all, {}, gw, "mock", params);
    CHECK(mock.chat_calls() == 2);
    CHECK(ok.per_speaker.at("A") == "A was polite.");
    CHECK(ok.per_speaker.at("B") == "B left.");
    CHECK(ok.failed_speakers.empty());
    CHECK_FALSE(ok.failed());

    mock.script_chat("A again.");
    mock.script_chat(MockLmServer::ChatScript{"overloaded", 500});
    auto partial = summarize_chunk(conv, all, {}, gw, "mock", params);
    CHECK(partial.per_speaker.size() == 1);
    CHECK(partial.per_speaker.count("A") == 1);
    CHECK(partial.failed_speakers == std::vector<std::string>{"B"});
    CHECK_FALSE(partial.failed());

    Chunk outside{"c9", 1, 7, {1.0}};
    CHECK(code_of([&] { summarize_chunk(conv, outside, {}, gw, "mock", params); }) ==
          ErrorCode::PreconditionViolation);
}

TEST_CASE("each speaker prompt carries that speaker") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    auto conv = fixtures::conversation({{"A", "hi"}, {"B", "bye"}});
    SummaryParams params;
    params.instruction_template = kTemplate;
    auto s = summarize_chunk(conv, {"c0", 0, 1, {1.0}}, {}, gw, "mock", params);
    // echo mock: the reply is the prompt itself
    CHECK(s.per_speaker.at("A").rfind("S=A\n", 0) == 0);
    CHECK(s.per_speaker.at("B").rfind("S=B\n", 0) == 0);
}

TEST_CASE("conversation summaries with progress") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    auto conv = two_topics(mock);
    LabelMap labels{{"m4", "insult"}};
    for (int i = 1; i <= 6; ++i)
        if (i != 4) labels["m" + std::to_string(i)] = "none";

    std::vector<double> progress{0.0};
    std::size_t total = 0;
    SummaryHooks hooks;
    hooks.on_total = [&](std::size_t t) { total = t; };
    hooks.on_chunk_done = [&](std::size_t done) { progress.push_back(double(done) / double(total)); };
    auto result = summarize_conversation(conv, labels, gw, "mock", "mock", two_topic_params(), hooks);

    CHECK(progress == std::vector<double>{0.0, 0.5, 1.0});
    REQUIRE(result.chunks.size() == 2);
    REQUIRE(result.summaries.size() == 2);
    CHECK(result.summaries[0].flagged_refs.empty());
    CHECK(result.summaries[1].flagged_refs == std::vector<std::string>{"m4"});
    CHECK(contains(result.summaries[1].per_speaker.at("B"), "1. [insult] B: you idiot"));
    CHECK(contains(result.summaries[0].per_speaker.at("B"), "T:\nnone"));
    CHECK(result.summaries[0].group_id != result.summaries[1].group_id);

    auto b = speaker_summaries(result, "B");
    REQUIRE(b.size() == 2);
    CHECK(contains(b[0], "cats"));
    CHECK(contains(b[1], "dogs"));

    auto j = to_json(result);
    CHECK(j["conversation_key"] == "c1");
    CHECK(j["flagged"]["c1"] == nlohmann::json::array({"m4"}));
    CHECK(j["results"].size() == 2);
    CHECK(j["failed"].empty());
}

TEST_CASE("flagged refs are the toxic-labelled turns of each chunk") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    auto conv = two_topics(mock);
    std::mt19937_64 rng(3);
    const std::vector<std::string> vocab = {"none", "insult", "threat"};
    for (int trial = 0; trial < 10; ++trial) {
        LabelMap labels;
        for (const auto& t : conv.turns)
            if (rng() % 4) labels[t.id] = vocab[rng() % vocab.size()];
        auto result = summarize_conversation(conv, labels, gw, "mock", "mock", two_topic_params());
        for (std::size_t c = 0; c < result.chunks.size(); ++c) {
            std::vector<std::string> expected;
            for (std::size_t i = result.chunks[c].start; i <= result.chunks[c].end; ++i) {
                auto it = labels.find(conv.turns[i].id);
                if (it != labels.end() && it->second != "none") expected.push_back(conv.turns[i].id);
            }
            CHECK(result.summaries[c].flagged_refs == expected);
        }
    }
}

TEST_CASE("every chunk failing is an error, and results are deterministic") {
    MockLmServer mock;
    LmGateway gw;
    auto spec = fixtures::mock_provider(mock);
    spec.max_retries = 0;
    gw.add_provider(spec);
    auto conv = two_topics(mock);

    auto first = summarize_conversation(conv, {}, gw, "mock", "mock", two_topic_params());
    auto second = summarize_conversation(conv, {}, gw, "mock", "mock", two_topic_params());
    CHECK(to_json(first) == to_json(second));

    // chat on a second server so the embedding calls still succeed
    MockLmServer down;
    auto chat = fixtures::mock_provider(down, "down");
    chat.max_retries = 0;
    gw.add_provider(chat);
    down.fail_next(100, 500);
    CHECK(code_of([&] { summarize_conversation(conv, {}, gw, "down", "mock", two_topic_params()); }) ==
          ErrorCode::LmUnavailable);
    CHECK(down.chat_calls() == 4);

    SummaryHooks stop;
    stop.cancelled = [] { return true; };
    CHECK(code_of([&] { summarize_conversation(conv, {}, gw, "mock", "mock", two_topic_params(), stop); }) ==
          ErrorCode::Cancelled);
}

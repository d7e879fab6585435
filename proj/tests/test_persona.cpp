#include "doctest.h"

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/mock_lm.hpp"
#include "toxiscope/persona.hpp"
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

std::string well_formed(const std::string& scores) {
    return scores +
           "\n\n**Openness to Experience**: open\n\n**Conscientiousness**: tidy\n\n"
           "**Extraversion**: loud\n\n**Agreeableness**: harsh\n\n**Neuroticism**: tense\n\n"
           "**Overall Persona Analysis**: a blunt speaker.";
}

}  // namespace

TEST_CASE("prompt rendering") {
    auto shipped = default_persona_template();
    auto prompt = render_persona_prompt(shipped, "alice", "S");
    CHECK(contains(prompt, "for alice"));
    CHECK(contains(prompt, "Chat Messages Summary:\nS"));
    CHECK_FALSE(contains(prompt, "[speaker]"));
    CHECK_FALSE(contains(prompt, "[summary]"));

    CHECK(code_of([&] { render_persona_prompt(shipped, "alice", "  \n"); }) == ErrorCode::EmptySummary);
    CHECK(render_persona_prompt("[speaker]|[summary]", "a]b", "[speaker]") == "a]b|[speaker]");
}

TEST_CASE("parsing the response format") {
    auto p = parse_persona_response(well_formed("[7, 5, 6, 3, 8]"));
    CHECK(p.scores == std::array<int, 5>{7, 5, 6, 3, 8});
    CHECK(p.explanations[0] == "open");
    CHECK(p.explanations[3] == "harsh");
    CHECK(p.explanations[4] == "tense");
    CHECK(p.overall == "a blunt speaker.");
    CHECK(p.warnings.empty());

    auto quoted = parse_persona_response("\"" + well_formed("[1,2,3,4,5]") + "\"");
    CHECK(quoted.overall == "a blunt speaker.");

    auto alt = parse_persona_response(
        "[2,2,2,2,2] **Openness to Experience:** a **Conscientiousness:** b **Extraversion:** c "
        "**Agreeableness:** d **Neuroticism:** e **Overall Persona Analysis:** f");
    CHECK(alt.explanations[2] == "c");
    CHECK(alt.overall == "f");
}

TEST_CASE("malformed responses") {
    CHECK(code_of([] { parse_persona_response(well_formed("[7, 5, 6]")); }) == ErrorCode::ParseFailure);
    CHECK(code_of([] { parse_persona_response("no scores at all"); }) == ErrorCode::ParseFailure);
    CHECK(code_of([] { parse_persona_response("[1,2,3,4,5] **Openness to Experience**: x"); }) ==
          ErrorCode::ParseFailure);
}

TEST_CASE("out-of-range scores clamp with warnings") {
    auto p = parse_persona_response(well_formed("[12, 5, 6, 3, 0]"));
    CHECK(p.scores == std::array<int, 5>{10, 5, 6, 3, 1});
    CHECK(p.warnings.size() == 2);
    auto huge = parse_persona_response(well_formed("[99999999999999999999, -4, 5, 5, 5]"));
    CHECK(huge.scores == std::array<int, 5>{10, 1, 5, 5, 5});
}

TEST_CASE("fuzzed well-formed replies parse back exactly") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
        auto reply = oracle::persona_reply(rng);
        auto p = parse_persona_response(reply.text);
        CHECK(p.scores == reply.scores);
        CHECK(p.explanations == reply.explanations);
        CHECK(p.overall == reply.overall);
        CHECK(p.warnings.empty());
    }
}

TEST_CASE("analysis calls the model once, retrying once on junk") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    const std::vector<std::string> summaries = {"first part", "second part"};

    mock.script_chat(well_formed("[4,4,4,4,4]"));
    auto profile = analyze_persona("bob", summaries, gw, "mock");
    CHECK(mock.chat_calls() == 1);
    CHECK(profile.speaker == "bob");
    CHECK(profile.scores == std::array<int, 5>{4, 4, 4, 4, 4});
    CHECK(profile.source_summary_hash == sha256_hex("first part\n\nsecond part"));
    auto sent = mock.chat_requests().back()["messages"][0]["content"].get<std::string>();
    CHECK(contains(sent, "Chat Messages Summary:\nfirst part\n\nsecond part"));

    mock.reset_counters();
    mock.script_chat("I would rather not.");
    mock.script_chat(well_formed("[6,6,6,6,6]"));
    auto retried = analyze_persona("bob", summaries, gw, "mock");
    CHECK(mock.chat_calls() == 2);
    CHECK(retried.scores[0] == 6);
    auto second = mock.chat_requests().back()["messages"][0]["content"].get<std::string>();
    CHECK(contains(second, std::string(kPersonaFormatReminder)));

    mock.reset_counters();
    mock.script_chat("junk");
    mock.script_chat("more junk");
    CHECK(code_of([&] { analyze_persona("bob", summaries, gw, "mock"); }) == ErrorCode::ParseFailure);
    CHECK(mock.chat_calls() == 2);

    CHECK(code_of([&] { analyze_persona("bob", {}, gw, "mock"); }) == ErrorCode::EmptySummary);
}

TEST_CASE("profile json and hash determinism") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    mock.script_chat(well_formed("[1,2,3,4,5]"));
    mock.script_chat(well_formed("[1,2,3,4,5]"));
    auto a = analyze_persona("x", {"s"}, gw, "mock");
    auto b = analyze_persona("x", {"s"}, gw, "mock");
    CHECK(a.source_summary_hash == b.source_summary_hash);
    auto j = to_json(a);
    CHECK(j["scores"]["neuroticism"] == 5);
    CHECK(j["explanations"]["openness"] == "open");
    CHECK(j["disclaimer"] == std::string(kPersonaDisclaimer));
    CHECK(j["warnings"].empty());
}

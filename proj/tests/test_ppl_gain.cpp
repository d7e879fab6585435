#include "doctest.h"

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/mock_lm.hpp"
#include "toxiscope/ppl_gain.hpp"

#include <cmath>
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

std::vector<TokenScore> scores(std::initializer_list<double> lps) {
    std::vector<TokenScore> out;
    for (double lp : lps) out.push_back({"t", lp});
    return out;
}

// The input with turn i left out, written from the rendering rule directly.
std::string without_turn(const std::vector<std::pair<std::string, std::string>>& turns, std::size_t skip) {
    std::string out;
    bool first = true;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        if (i == skip) continue;
        if (!first) out += "\n";
        out += turns[i].first + ": " + turns[i].second;
        first = false;
    }
    return out;
}

}  // namespace

TEST_CASE("perplexity examples") {
    CHECK(perplexity(scores({0, 0, 0})) == 1.0);
    CHECK(perplexity(scores({-0.1, -0.2, -0.3})) == doctest::Approx(std::exp(0.2)).epsilon(1e-12));
    CHECK(perplexity(scores({-0.1, -0.2, -0.3})) == doctest::Approx(1.22140).epsilon(1e-5));
    CHECK(perplexity(scores({-std::log(2.0)})) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(code_of([] { perplexity(std::vector<TokenScore>{}); }) == ErrorCode::EmptyScores);
}

TEST_CASE("segmentation") {
    auto conv = fixtures::conversation({{"a", "hi there"}, {"b", "Stop. Now!"}, {"a", "ok"}});
    auto units = segment_units(conv, Granularity::Message);
    REQUIRE(units.size() == 3);
    CHECK(units[1].text == "Stop. Now!");
    CHECK(units[2].index == 3);

    auto one = fixtures::conversation({{"b", "Stop. Now!"}});
    auto sentences = segment_units(one, Granularity::Sentence);
    REQUIRE(sentences.size() == 2);
    CHECK(sentences[0].text == "Stop.");
    CHECK(sentences[1].text == "Now!");
    CHECK(sentences[0].prefix == "b: ");
    CHECK(sentences[1].prefix.empty());

    ConversationRecord empty;
    CHECK(code_of([&] { segment_units(empty, Granularity::Message); }) == ErrorCode::EmptyConversation);
}

TEST_CASE("speaker prefixes are never split") {
    auto conv = fixtures::conversation({{"Dr. Who", "Hi. Bye."}});
    auto units = segment_units(conv, Granularity::Sentence);
    REQUIRE(units.size() == 2);
    CHECK(units[0].prefix == "Dr. Who: ");
    CHECK(units[0].text == "Hi.");
}

TEST_CASE("reconstruction and ablation invariants on random conversations") {
    std::mt19937_64 rng(17);
    const std::vector<std::string> pieces = {"Hello.", "What?!", "no", "fine...", "e.g. this",
                                             "  spaced  ", "end.", "3.5 apples"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::pair<std::string, std::string>> turns;
        for (std::size_t t = 0, n = 1 + rng() % 6; t < n; ++t) {
            std::string text;
            for (std::size_t k = 0, m = 1 + rng() % 4; k < m; ++k)
                text += (k ? " " : "") + pieces[rng() % pieces.size()];
            turns.push_back({rng() % 4 ? "s" + std::to_string(rng() % 3) : "", text});
        }
        auto conv = fixtures::conversation(turns);
        for (auto g : {Granularity::Message, Granularity::Sentence}) {
            auto units = segment_units(conv, g);
            CHECK(reconstruct(units) == render_conversation(conv));
            for (std::size_t i = 1; i <= units.size(); ++i) {
                auto x = ablate(units, i);
                CHECK(x.find("\n\n") == std::string::npos);
                CHECK((x.empty() || x.back() != '\n'));
                CHECK(x.size() < render_conversation(conv).size());
            }
        }
    }
}

TEST_CASE("message ablation drops exactly one line") {
    std::vector<std::pair<std::string, std::string>> turns = {{"a", "one"}, {"b", "two"}, {"c", "three"}};
    auto units = segment_units(fixtures::conversation(turns), Granularity::Message);
    for (std::size_t i = 0; i < 3; ++i) CHECK(ablate(units, i + 1) == without_turn(turns, i));
}

TEST_CASE("sentence ablation keeps the speaker prefix") {
    auto units = segment_units(fixtures::conversation({{"a", "x"}, {"b", "Stop. Now!"}}), Granularity::Sentence);
    REQUIRE(units.size() == 3);
    CHECK(ablate(units, 2) == "a: x\nb: Now!");
    CHECK(ablate(units, 3) == "a: x\nb: Stop.");
    CHECK(ablate(units, 1) == "b: Stop. Now!");
}

TEST_CASE("heatmap normalization") {
    auto make = [](std::initializer_list<double> gains) {
        std::vector<RelevanceScore> out;
        std::size_t i = 1;
        for (double g : gains) out.push_back({i++, g, 1.0, 1.0 + g});
        return out;
    };
    CHECK(heatmap_normalize(make({0.6, 0.3, 0.0})) == std::vector<double>{1.0, 0.5, 0.0});
    CHECK(heatmap_normalize(make({-0.2, -0.1})) == std::vector<double>{0.0, 0.0});
    CHECK(heatmap_normalize(make({0.4})) == std::vector<double>{1.0});

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<RelevanceScore> s;
        for (std::size_t i = 0, n = 1 + rng() % 10; i < n; ++i) s.push_back({i + 1, u(rng), 1, 1});
        auto h = heatmap_normalize(s);
        std::size_t argmax = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK(h[i] >= 0.0);
            CHECK(h[i] <= 1.0);
            if (s[i].gain > s[argmax].gain) argmax = i;
        }
        if (s[argmax].gain > 0) CHECK(h[argmax] == 1.0);
    }
}

TEST_CASE("perplexity gain on the worked fixture") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    std::vector<std::pair<std::string, std::string>> turns = {{"a", "you are awful"}, {"b", "calm down"}};
    auto conv = fixtures::conversation(turns);
    const std::string y = "\nVerdict: toxic";
    mock.add_score_fixture({render_conversation(conv), y, {-0.1, -0.2, -0.3}});
    mock.add_score_fixture({without_turn(turns, 0), y, {-0.5, -0.6, -0.7}});
    mock.add_score_fixture({without_turn(turns, 1), y, {-0.1, -0.2, -0.3}});

    auto r = perplexity_gain(conv, y, gw, "mock");
    REQUIRE(r.scores.size() == 2);
    CHECK(mock.score_calls() == 3);
    CHECK(std::abs(r.scores[0].gain - (std::exp(0.6) - std::exp(0.2))) < 1e-12);
    CHECK(r.scores[0].gain == doctest::Approx(0.60072).epsilon(1e-5));
    CHECK(r.scores[1].gain == 0.0);
    CHECK(r.scores[0].ppl_full == r.scores[1].ppl_full);
    CHECK(r.intensities == std::vector<double>{1.0, 0.0});

    auto j = to_json(r);
    CHECK(j["scores"].size() == 2);
    CHECK(j["ppl_full"].get<double>() == r.ppl_full);
    CHECK(j["units"][0]["text"] == "you are awful");
}

TEST_CASE("single-unit conversations are scored against the empty context") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    auto conv = fixtures::conversation({{"a", "only"}});
    mock.add_score_fixture({"a: only", "Y!", {-0.2, -0.2}});
    mock.add_score_fixture({"", "Y!", {-1.0, -1.0}});
    auto r = perplexity_gain(conv, "Y!", gw, "mock");
    REQUIRE(r.scores.size() == 1);
    CHECK(std::abs(r.scores[0].gain - (std::exp(1.0) - std::exp(0.2))) < 1e-12);
}

TEST_CASE("N+1 calls, oracle agreement and cache reuse on random fixtures") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> lp(-4.0, -0.01);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::pair<std::string, std::string>> turns;
        for (std::size_t i = 0, n = 1 + rng() % 6; i < n; ++i)
            turns.push_back({"s" + std::to_string(i % 3), "msg " + std::to_string(trial) + "-" + std::to_string(i)});
        auto conv = fixtures::conversation(turns);
        const std::string y = " label" + std::to_string(trial);
        auto draw = [&] {
            std::vector<double> v(1 + rng() % 5);
            for (auto& x : v) x = lp(rng);
            return v;
        };
        auto full = draw();
        mock.add_score_fixture({render_conversation(conv), y, full});
        std::vector<std::vector<double>> ablated;
        for (std::size_t i = 0; i < turns.size(); ++i) {
            ablated.push_back(draw());
            mock.add_score_fixture({without_turn(turns, i), y, ablated.back()});
        }
        mock.reset_counters();
        ScoreCache cache;
        PplGainOptions opts;
        opts.cache = &cache;
        auto r = perplexity_gain(conv, y, gw, "mock", opts);
        CHECK(mock.score_calls() == turns.size() + 1);
        for (std::size_t i = 0; i < turns.size(); ++i) {
            double want = oracle::perplexity(ablated[i]) - oracle::perplexity(full);
            CHECK(std::abs(r.scores[i].gain - want) < 1e-9);
            CHECK(r.scores[i].ppl_full == r.ppl_full);
            CHECK(r.scores[i].unit_index == i + 1);
        }
        perplexity_gain(conv, y, gw, "mock", opts);
        CHECK(mock.score_calls() == turns.size() + 1);
    }
}

TEST_CASE("provider without logprobs is rejected up front") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock, "chat", {Capability::Chat}));
    auto conv = fixtures::conversation({{"a", "x"}});
    CHECK(code_of([&] { perplexity_gain(conv, "y", gw, "chat"); }) == ErrorCode::LogprobsUnsupported);
    CHECK(mock.total_calls() == 0);
}

TEST_CASE("context template wraps every scored input") {
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    std::vector<std::pair<std::string, std::string>> turns = {{"a", "x"}, {"b", "z"}};
    auto conv = fixtures::conversation(turns);
    mock.add_score_fixture({"Chat:\na: x\nb: z\nAnswer:", " no", {-0.4}});
    mock.add_score_fixture({"Chat:\nb: z\nAnswer:", " no", {-0.9}});
    mock.add_score_fixture({"Chat:\na: x\nAnswer:", " no", {-0.4}});
    PplGainOptions opts;
    opts.context_template = "Chat:\n{conversation}\nAnswer:";
    auto r = perplexity_gain(conv, " no", gw, "mock", opts);
    CHECK(std::abs(r.scores[0].gain - (std::exp(0.9) - std::exp(0.4))) < 1e-12);
    CHECK(r.scores[1].gain == 0.0);
}

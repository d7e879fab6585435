#include "doctest.h"

#include "toxiscope/csv.hpp"
#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include <atomic>
#include <random>

using namespace toxiscope;

TEST_CASE("sha256 of known inputs") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("string helpers") {
    CHECK(trim("  a b \n") == "a b");
    CHECK(trim("   ").empty());
    CHECK(to_lower("TeXt") == "text");
    CHECK(split("a,,b", ',') == std::vector<std::string>{"a", "", "b"});
    CHECK(join({"x", "y", "z"}, ", ") == "x, y, z");
    CHECK(count_occurrences("{a}{a}{b}", "{a}") == 2);
}

TEST_CASE("substitute is single pass and leaves unknown slots alone") {
    CHECK(substitute("{a} and {b}", {{"a", "{b}"}, {"b", "B"}}) == "{b} and B");
    CHECK(substitute("{x}", {}) == "{x}");
    CHECK(substitute("unclosed {a", {{"a", "A"}}) == "unclosed {a");
    CHECK(substitute("[s]]", {{"s", "x]"}}, '[', ']') == "x]]");
}

TEST_CASE("parallel_for visits every index once and bounds concurrency") {
    std::vector<std::atomic<int>> hits(100);
    std::atomic<int> active{0}, peak{0};
    parallel_for(100, 3, [&](std::size_t i) {
        int now = ++active;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        ++hits[i];
        --active;
    });
    for (auto& h : hits) CHECK(h == 1);
    CHECK(peak <= 3);
}

TEST_CASE("parallel_for rethrows a task error after joining") {
    std::atomic<int> ran{0};
    CHECK_THROWS_AS(parallel_for(20, 4,
                                 [&](std::size_t i) {
                                     ++ran;
                                     if (i == 7) fail(ErrorCode::LmUnavailable, "boom");
                                 }),
                    Error);
    CHECK(ran == 20);
}

TEST_CASE("csv parser handles quoting") {
    auto recs = csv::parse("a,b\r\n\"x, y\",\"he said \"\"hi\"\"\"\n\"multi\nline\",z\n");
    REQUIRE(recs.size() == 3);
    CHECK(recs[1].fields == std::vector<std::string>{"x, y", "he said \"hi\""});
    CHECK(recs[2].fields == std::vector<std::string>{"multi\nline", "z"});
    CHECK(recs[2].row == 3);
}

TEST_CASE("csv errors carry the row") {
    try {
        csv::parse("text,label\nok,a\nfine,b\n\"broken,c\n");
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ParseError);
        CHECK(e.row() == 4u);
    }
    CHECK_THROWS_AS(csv::parse("a\nb\"c\n"), Error);
}

TEST_CASE("csv format/parse round-trip on random fields") {
    std::mt19937_64 rng(7);
    const std::string alphabet = "ab,\"\n\r x";
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<std::string>> rows(1 + rng() % 5);
        std::size_t width = 1 + rng() % 4;
        std::string text;
        for (auto& row : rows) {
            for (std::size_t c = 0; c < width; ++c) {
                std::string f;
                for (std::size_t k = 0, n = rng() % 6; k < n; ++k) f += alphabet[rng() % alphabet.size()];
                row.push_back(f);
            }
            text += csv::format_row(row);
        }
        auto parsed = csv::parse(text);
        REQUIRE(parsed.size() == rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) CHECK(parsed[r].fields == rows[r]);
    }
}

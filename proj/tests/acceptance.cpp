// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include "support/harness.hpp"
#include "support/oracles.hpp"

#include "toxiscope/chunker.hpp"
#include "toxiscope/classify.hpp"
#include "toxiscope/csv.hpp"
#include "toxiscope/error.hpp"
#include "toxiscope/persona.hpp"
#include "toxiscope/ppl_gain.hpp"
#include "toxiscope/store.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

using namespace toxiscope;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void expect(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream out;
    out.precision(digits);
    out << std::fixed << v;
    return out.str();
}

LabelSchema schema_of(std::size_t k) {
    LabelSchema s{"k" + std::to_string(k), {}, std::nullopt, std::nullopt, std::nullopt};
    for (std::size_t i = 0; i < k; ++i) s.labels.push_back("L" + std::to_string(i));
    return s;
}

Outcome metric_oracle() {
    Outcome o;
    auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    std::size_t cases = 0;
    for (std::size_t k : {2u, 4u, 11u}) {
        auto s = schema_of(k);
        for (int trial = 0; trial < 1000; ++trial, ++cases) {
            std::size_t n = 1 + rng() % 80;
            std::vector<std::string> gold, pred;
            for (std::size_t i = 0; i < n; ++i) {
                gold.push_back(s.labels[rng() % k]);
                pred.push_back(s.labels[rng() % k]);
            }
            auto got = classification_report(gold, pred, s);
            auto want = oracle::metrics(gold, pred);
            o.expect(std::abs(got.macro_f1 - want.macro_f1) < 1e-9, "macro_f1 mismatch");
            o.expect(std::abs(got.accuracy - want.accuracy) < 1e-9, "accuracy mismatch");
            o.expect(got.per_label.size() == want.per_label.size(), "label set mismatch");
            for (const auto& m : got.per_label) {
                auto it = want.per_label.find(m.label);
                if (it == want.per_label.end()) {
                    o.expect(false, "unexpected label " + m.label);
                    continue;
                }
                o.expect(std::abs(m.precision - it->second.precision) < 1e-9 &&
                             std::abs(m.recall - it->second.recall) < 1e-9 &&
                             std::abs(m.f1 - it->second.f1) < 1e-9 && m.support == it->second.support,
                         "per-label mismatch on " + m.label);
            }
        }
    }
    LabelSchema ab{"ab", {"A", "B"}, std::nullopt, std::nullopt, std::nullopt};
    auto worked = classification_report({"A", "A", "B", "B"}, {"A", "B", "B", "B"}, ab);
    o.expect(std::abs(worked.macro_f1 - 11.0 / 15.0) < 1e-12, "worked example macro_f1 " + fmt(worked.macro_f1, 6));
    o.expect(fmt(worked.macro_f1, 4) == "0.7333", "worked example does not print as 0.7333");
    double elapsed = seconds_since(t0);
    o.expect(elapsed < 10.0, "runtime " + fmt(elapsed) + " s");
    if (o.ok)
        o.detail = std::to_string(cases) + " random cases, worked example " + fmt(worked.macro_f1, 4) + ", " +
                   fmt(elapsed) + " s";
    return o;
}

Outcome ppl_gain_oracle() {
    Outcome o;
    auto t0 = Clock::now();
    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));

    // the documented fixture
    auto conv = fixtures::conversation({{"a", "you are awful"}, {"b", "calm down"}});
    const std::string y = "\nVerdict: toxic";
    mock.add_score_fixture({"a: you are awful\nb: calm down", y, {-0.1, -0.2, -0.3}});
    mock.add_score_fixture({"b: calm down", y, {-0.5, -0.6, -0.7}});
    mock.add_score_fixture({"a: you are awful", y, {-0.1, -0.2, -0.3}});
    auto worked = perplexity_gain(conv, y, gw, "mock");
    o.expect(std::abs(worked.scores[0].gain - (std::exp(0.6) - std::exp(0.2))) < 1e-9, "worked fixture gain");
    o.expect(fmt(worked.scores[0].gain, 5) == "0.60072", "worked fixture prints " + fmt(worked.scores[0].gain, 5));
    o.expect(mock.score_calls() == 3, "worked fixture used " + std::to_string(mock.score_calls()) + " calls");

    std::mt19937_64 rng(50);
    std::uniform_real_distribution<double> lp(-5.0, -0.01);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::pair<std::string, std::string>> turns;
        for (std::size_t i = 0, n = 1 + rng() % 12; i < n; ++i)
            turns.push_back({"s" + std::to_string(rng() % 3), "t" + std::to_string(trial) + "." + std::to_string(i)});
        auto c = fixtures::conversation(turns);
        auto draw = [&] {
            std::vector<double> v(1 + rng() % 6);
            for (auto& x : v) x = lp(rng);
            return v;
        };
        const std::string out = " verdict " + std::to_string(trial);
        auto full = draw();
        mock.add_score_fixture({render_conversation(c), out, full});
        std::vector<std::vector<double>> ablated;
        for (std::size_t skip = 0; skip < turns.size(); ++skip) {
            std::string ctx;
            for (std::size_t i = 0; i < turns.size(); ++i) {
                if (i == skip) continue;
                if (!ctx.empty()) ctx += "\n";
                ctx += turns[i].first + ": " + turns[i].second;
            }
            ablated.push_back(draw());
            mock.add_score_fixture({ctx, out, ablated.back()});
        }
        mock.reset_counters();
        auto r = perplexity_gain(c, out, gw, "mock");
        o.expect(mock.score_calls() == turns.size() + 1,
                 "trial " + std::to_string(trial) + " made " + std::to_string(mock.score_calls()) + " calls");
        o.expect(r.scores.size() == turns.size(), "score count");
        for (std::size_t i = 0; i < r.scores.size(); ++i) {
            double want = oracle::perplexity(ablated[i]) - oracle::perplexity(full);
            o.expect(std::abs(r.scores[i].gain - want) < 1e-9, "gain mismatch in trial " + std::to_string(trial));
        }
    }
    double elapsed = seconds_since(t0);
    o.expect(elapsed < 30.0, "runtime " + fmt(elapsed) + " s");
    if (o.ok)
        o.detail = "worked R=" + fmt(worked.scores[0].gain, 5) + ", 50 fixtures at 1e-9, N+1 calls, " + fmt(elapsed) + " s";
    return o;
}

Prediction voted(const std::string& label, const LabelSchema& schema) {
    std::vector<double> p(schema.labels.size(), 0.1 / double(schema.labels.size() - 1));
    p[*schema.index_of(label)] = 0.9;
    return make_prediction("m", schema, p);
}

Outcome ensemble_oracle() {
    Outcome o;
    LabelSchema four{"four", {"A", "B", "C", "D"}, std::nullopt, std::nullopt, std::nullopt};
    const std::vector<std::string> members = {"m1", "m2", "m3"};
    std::size_t agree = 0, total = 0, fallback_cases = 0;
    for (std::size_t fallback = 0; fallback < 3; ++fallback) {
        EnsembleConfig cfg{"e", members, members[fallback]};
        for (int code = 0; code < 64; ++code, ++total) {
            std::vector<int> ballots = {code % 4, (code / 4) % 4, code / 16};
            std::map<std::string, Prediction> per;
            for (int m = 0; m < 3; ++m) per[members[m]] = voted(four.labels[ballots[m]], four);
            auto got = ensemble_predict(per, cfg, four);
            bool tie = ballots[0] != ballots[1] && ballots[1] != ballots[2] && ballots[0] != ballots[2];
            fallback_cases += tie;
            agree += got.argmax_label == four.labels[oracle::vote(ballots, fallback)];
        }
    }
    o.expect(agree == total, std::to_string(agree) + "/" + std::to_string(total) + " agree");
    if (o.ok)
        o.detail = "64 patterns x 3 fallback positions, " + std::to_string(agree) + "/" + std::to_string(total) +
                   " agree (" + std::to_string(fallback_cases) + " fallback cases)";
    return o;
}

Outcome chunker_properties() {
    Outcome o;
    auto t0 = Clock::now();
    std::mt19937_64 rng(60);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::vector<double> percentiles = {50, 75, 90, 95, 100};
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 49;
        // random walk over a few topic directions
        std::vector<std::vector<double>> topics(1 + rng() % 4, std::vector<double>(8));
        for (auto& t : topics)
            for (auto& x : t) x = g(rng);
        std::vector<std::vector<double>> e;
        std::size_t topic = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng() % 5 == 0) topic = rng() % topics.size();
            auto v = topics[topic];
            for (auto& x : v) x += 0.3 * g(rng);
            double norm = 0;
            for (double x : v) norm += x * x;
            for (auto& x : v) x /= std::sqrt(norm);
            e.push_back(std::move(v));
        }
        auto d = distances_from_embeddings(e);
        const std::size_t m = 1 + rng() % 3;
        std::size_t previous = SIZE_MAX;
        for (double p : percentiles) {
            auto cuts = detect_breakpoints(d, p, m);
            auto chunks = build_chunks(n, cuts, e);
            std::size_t next = 0;
            for (const auto& c : chunks) {
                o.expect(c.start == next && c.end >= c.start, "chunks do not tile the conversation");
                if (chunks.size() > 1) o.expect(c.end - c.start + 1 >= m, "chunk below min size");
                next = c.end + 1;
            }
            o.expect(next == n, "chunks do not cover every turn");
            o.expect(cuts.size() <= previous, "cut count grew with the percentile");
            previous = cuts.size();
        }
    }
    // permutation invariance of regrouping
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Chunk> chunks;
        std::vector<std::vector<double>> anchors(1 + rng() % 3, std::vector<double>(6));
        for (auto& a : anchors)
            for (auto& x : a) x = g(rng);
        for (std::size_t i = 0, n = 2 + rng() % 10; i < n; ++i) {
            auto v = anchors[rng() % anchors.size()];
            for (auto& x : v) x += 0.25 * g(rng);
            double norm = 0;
            for (double x : v) norm += x * x;
            for (auto& x : v) x /= std::sqrt(norm);
            chunks.push_back({"c" + std::to_string(i), 2 * i, 2 * i + 1, v});
        }
        auto base = regroup_topics(chunks, 0.85);
        auto shuffled = chunks;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        auto again = regroup_topics(shuffled, 0.85);
        bool same = base.size() == again.size();
        for (std::size_t k = 0; same && k < base.size(); ++k)
            same = base[k].member_chunk_ids == again[k].member_chunk_ids;
        o.expect(same, "regrouping changed under a shuffle");
    }
    double elapsed = seconds_since(t0);
    o.expect(elapsed < 60.0, "runtime " + fmt(elapsed) + " s");
    if (o.ok) o.detail = "1000 sequences (N<=50), 200 shuffles, " + fmt(elapsed) + " s";
    return o;
}

bool valid_scores(const std::array<int, 5>& s) {
    for (int v : s)
        if (v < 1 || v > 10) return false;
    return true;
}

Outcome persona_parsing() {
    Outcome o;
    std::mt19937_64 rng(70);
    std::size_t parsed = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto reply = oracle::persona_reply(rng);
        try {
            auto p = parse_persona_response(reply.text);
            bool same = p.scores == reply.scores && p.explanations == reply.explanations && p.overall == reply.overall;
            parsed += same;
            o.expect(same, "fuzzed reply parsed to different content");
        } catch (const Error& e) {
            o.expect(false, std::string("fuzzed reply rejected: ") + e.what());
        }
    }

    MockLmServer mock;
    LmGateway gw;
    gw.add_provider(fixtures::mock_provider(mock));
    auto body = [](const std::string& scores) {
        return scores +
               "\n**Openness to Experience**: a\n**Conscientiousness**: b\n**Extraversion**: c\n"
               "**Agreeableness**: d\n**Neuroticism**: e\n**Overall Persona Analysis**: f";
    };
    mock.script_chat(body("[12, 5, 6, 3, 0]"));
    auto clamped = analyze_persona("x", {"summary"}, gw, "mock");
    o.expect(clamped.scores == std::array<int, 5>{10, 5, 6, 3, 1}, "clamping");
    o.expect(clamped.warnings.size() == 2, "clamp warnings");
    o.expect(mock.chat_calls() == 1, "clamped reply should not be retried");

    mock.reset_counters();
    mock.script_chat("[7, 5, 6] not the format");
    mock.script_chat(body("[7, 5, 6, 3, 8]"));
    auto retried = analyze_persona("x", {"summary"}, gw, "mock");
    o.expect(mock.chat_calls() == 2 && retried.scores == std::array<int, 5>{7, 5, 6, 3, 8}, "retry after junk");

    mock.reset_counters();
    mock.script_chat("junk");
    mock.script_chat("junk again");
    bool failed = false;
    try {
        analyze_persona("x", {"summary"}, gw, "mock");
    } catch (const Error& e) {
        failed = e.code() == ErrorCode::ParseFailure;
    }
    o.expect(failed && mock.chat_calls() == 2, "two bad replies should give ParseFailure after 2 calls");

    // out-of-range fuzz still yields valid profiles
    std::uniform_int_distribution<int> wild(-50, 60);
    for (int trial = 0; trial < 200; ++trial) {
        std::string list = "[";
        for (int i = 0; i < 5; ++i) list += (i ? ", " : "") + std::to_string(wild(rng));
        mock.script_chat(body(list + "]"));
        o.expect(valid_scores(analyze_persona("x", {"s"}, gw, "mock").scores), "profile outside [1,10]");
    }
    if (o.ok) o.detail = std::to_string(parsed) + "/1000 fuzzed replies, clamp and retry verified";
    return o;
}

std::string labelled_sample() {
    auto csv = read_file(fixtures::resource("samples/chat_sample.csv"));
    std::istringstream in(csv);
    std::string line, out;
    bool header = true;
    int row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out += line + (header ? ",label\n" : (row++ % 3 == 0 ? ",sexist\n" : ",not sexist\n"));
        header = false;
    }
    return out;
}

Outcome e2e_smoke(Outcome& cancellation) {
    Outcome o;
    auto t0 = Clock::now();
    harness::Api api;

    auto up = api.post("/v1/datasets", {{"name", "chat.csv"}, {"content", labelled_sample()}});
    o.expect(up.status == 201, "upload returned " + std::to_string(up.status));
    if (!o.ok) return o;
    const std::string id = up.json()["dataset_id"];

    auto monotone = [](const std::vector<double>& p) {
        for (std::size_t i = 1; i < p.size(); ++i)
            if (p[i] < p[i - 1]) return false;
        return !p.empty() && p.back() == 1.0;
    };

    auto classify = api.post("/v1/jobs/classification", {{"dataset_id", id}, {"schema_id", "edos_binary"}});
    o.expect(classify.status == 202, "classification submit " + std::to_string(classify.status));
    std::vector<double> progress;
    auto cj = api.wait_job(classify.json()["job_id"], &progress);
    o.expect(cj["state"] == "done", "classification job " + cj["state"].get<std::string>());
    o.expect(monotone(progress), "classification progress not monotone");

    auto report = api.post("/v1/classify/report", {{"dataset_id", id}, {"schema_id", "edos_binary"}});
    o.expect(report.status == 200 && report.json()["per_label"].size() == 2, "report " + report.body);

    auto ppl = api.post("/v1/jobs/ppl_gain", {{"dataset_id", id}, {"conversation_key", "c2"}, {"output", " Verdict: fine"}});
    o.expect(ppl.status == 202, "ppl_gain submit");
    auto pj = api.wait_job(ppl.json()["job_id"]);
    o.expect(pj["state"] == "done" && pj["result"]["scores"].size() == 4, "ppl_gain job");

    progress.clear();
    auto summary = api.post("/v1/jobs/summarization",
                            {{"dataset_id", id}, {"predictions", {{"classifier_id", "stub"}, {"schema_id", "edos_binary"}}}});
    o.expect(summary.status == 202, "summarization submit " + summary.body);
    auto sj = api.wait_job(summary.json()["job_id"], &progress);
    o.expect(sj["state"] == "done", "summarization job " + sj.dump());
    o.expect(monotone(progress), "summarization progress not monotone from 0 to 1");

    auto persona = api.post("/v1/jobs/persona", {{"dataset_id", id}});
    auto pr = api.wait_job(persona.json()["job_id"]);
    o.expect(pr["state"] == "done", "persona job " + pr.dump());
    std::size_t profiles = 0;
    for (const auto& [speaker, raw] : api.service->store().list_results(id, "persona")) {
        auto j = json::parse(raw);
        for (auto key : kTraitKeys) {
            int v = j["scores"][std::string(key)].get<int>();
            o.expect(v >= 1 && v <= 10, "persisted score out of range for " + speaker);
        }
        ++profiles;
    }
    o.expect(profiles == 5, "expected 5 persisted profiles, found " + std::to_string(profiles));
    double elapsed = seconds_since(t0);
    o.expect(elapsed < 120.0, "runtime " + fmt(elapsed) + " s");
    if (o.ok) o.detail = "upload, classify, report, ppl-gain, summarize, persona in " + fmt(elapsed) + " s";

    // cancellation against the call counter
    cancellation = Outcome{};
    api.mock.set_latency_ms(40);
    json turns = json::array();
    for (int i = 0; i < 40; ++i) turns.push_back({{"speaker", "s"}, {"text", "line " + std::to_string(i)}});
    auto job = api.post("/v1/jobs/ppl_gain", {{"output", " y"}, {"conversation", turns}});
    const std::string job_id = job.json()["job_id"];
    auto start = api.mock.score_calls();
    while (api.mock.score_calls() < start + 3) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    auto cancel = api.del("/v1/jobs/" + job_id);
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    auto settled = api.mock.score_calls();
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    auto later = api.mock.score_calls();
    cancellation.expect(cancel.status == 200, "cancel returned " + std::to_string(cancel.status));
    cancellation.expect(later == settled, "calls continued after cancellation");
    cancellation.expect(settled - start < 41, "every call ran despite cancellation");
    cancellation.expect(api.get("/v1/jobs/" + job_id).json()["state"] == "cancelled", "job not cancelled");
    if (cancellation.ok)
        cancellation.detail = std::to_string(settled - start) + " of 41 scoring calls made before the job stopped";
    return o;
}

Outcome round_trips() {
    Outcome o;
    Store store;
    std::mt19937_64 rng(80);
    const std::vector<std::string> words = {"hi", "a,b", "say \"no\"", "multi\nline", "ok", "ünï"};
    std::size_t datasets = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const bool conv = trial % 2;
        std::string csv_text = conv ? "conversation_id,speaker,turn_index,text,label,id\n" : "text,label,id\n";
        for (int i = 0, n = 1 + int(rng() % 15); i < n; ++i) {
            std::string text = words[rng() % words.size()] + " " + words[rng() % words.size()];
            std::string label = rng() % 3 ? "l" + std::to_string(rng() % 3) : "";
            std::vector<std::string> row = conv ? std::vector<std::string>{"c" + std::to_string(rng() % 3), "s" + std::to_string(rng() % 2),
                                                                           std::to_string(i), text, label, "r" + std::to_string(i)}
                                                : std::vector<std::string>{text, label, "r" + std::to_string(i)};
            csv_text += csv::format_row(row);
        }
        auto first = store.ingest_dataset("orig", csv_text, DataFormat::Csv).descriptor;
        for (auto format : {DataFormat::Csv, DataFormat::Jsonl}) {
            auto copy = store.ingest_dataset("copy", store.export_dataset(first.dataset_id, format), format).descriptor;
            o.expect(store.records(copy.dataset_id) == store.records(first.dataset_id), "dataset round-trip differs");
            o.expect(copy.layout == first.layout, "layout changed in round-trip");
            ++datasets;
        }
    }

    harness::Api api;
    auto id = api.upload_sample();
    auto sid = api.post("/v1/assistant/sessions", {{"dataset_id", id}, {"conversation_key", "c1"}}).json()["session_id"].get<std::string>();
    api.post("/v1/assistant/sessions/" + sid + "/messages", {{"text", "summarize please"}, {"stream", false}});
    api.post("/v1/assistant/sessions/" + sid + "/messages", {{"template_id", "vawg_detect"}});
    auto exported = api.get("/v1/assistant/sessions/" + sid + "/export?format=json").json();
    auto imported = api.post("/v1/assistant/sessions/import", exported);
    o.expect(imported.status == 201, "import returned " + std::to_string(imported.status));
    const std::string copy = imported.json()["session_id"];
    auto again = api.get("/v1/assistant/sessions/" + copy + "/export?format=json").json();
    o.expect(exported.size() == 5, "expected 5 transcript entries, got " + std::to_string(exported.size()));
    o.expect(again == exported, "assistant history changed in export/import");
    if (o.ok) o.detail = std::to_string(datasets) + " dataset round-trips, assistant transcript of " +
                         std::to_string(exported.size()) + " entries";
    return o;
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    bool all = true;
    auto report = [&](const std::string& name, const std::function<Outcome()>& run) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o.ok = false;
            o.detail = std::string("exception: ") + e.what();
        }
        all = all && o.ok;
        std::printf("%s %s: %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    };
    report("metric oracle", metric_oracle);
    report("perplexity gain oracle", ppl_gain_oracle);
    report("ensemble oracle", ensemble_oracle);
    report("chunker properties", chunker_properties);
    report("persona parsing", persona_parsing);
    Outcome cancellation{false, "not reached"};
    report("end-to-end smoke", [&] { return e2e_smoke(cancellation); });
    report("cancellation stops model calls", [&] { return cancellation; });
    report("round-trips", round_trips);
    return all ? 0 : 1;
}

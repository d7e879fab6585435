#pragma once

// Reference implementations used to check the library. They are written from
// the definitions, not from the library code, and favour obviousness over
// speed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracle {

struct LabelScore {
    double precision = 0, recall = 0, f1 = 0;
    std::size_t support = 0;
};

struct Report {
    std::map<std::string, LabelScore> per_label;
    double macro_f1 = 0;
    double accuracy = 0;
};

// Counts true/false positives per label by scanning every pair; labels that
// appear in neither sequence do not enter the macro average.
inline Report metrics(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
    Report r;
    std::set<std::string> present(gold.begin(), gold.end());
    present.insert(pred.begin(), pred.end());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == pred[i];
    r.accuracy = double(hits) / double(gold.size());
    double sum = 0;
    for (const auto& label : present) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            bool g = gold[i] == label, p = pred[i] == label;
            tp += g && p;
            fp += !g && p;
            fn += g && !p;
        }
        LabelScore s;
        s.support = tp + fn;
        s.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
        s.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
        s.f1 = tp ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0;
        r.per_label[label] = s;
        sum += s.f1;
    }
    r.macro_f1 = sum / double(present.size());
    return r;
}

inline double perplexity(const std::vector<double>& logprobs) {
    double nll = 0;
    for (double lp : logprobs) nll -= lp;
    return std::exp(nll / double(logprobs.size()));
}

// Majority of three or more voters, else the fallback voter's choice.
inline int vote(const std::vector<int>& ballots, std::size_t fallback_index) {
    for (int candidate : ballots) {
        std::size_t count = std::count(ballots.begin(), ballots.end(), candidate);
        if (2 * count > ballots.size()) return candidate;
    }
    return ballots[fallback_index];
}

// Smallest value v such that at least p% of the values are <= v.
inline double percentile(const std::vector<double>& values, double p) {
    std::vector<double> candidates = values;
    std::sort(candidates.begin(), candidates.end());
    for (double v : candidates) {
        std::size_t at_most = std::count_if(values.begin(), values.end(),
                                            [&](double x) { return x <= v; });
        if (double(at_most) * 100.0 >= p * double(values.size()) - 1e-9) return v;
    }
    return candidates.back();
}

// Largest number of cuts such that every chunk has at least `min_size` turns,
// considering only cut positions in `allowed`. Exhaustive DP over prefixes.
inline std::size_t max_cuts(std::size_t n_turns, const std::set<std::size_t>& allowed,
                            std::size_t min_size) {
    // best[k] = max cuts tiling turns [0, k) with a cut right before k (k=0 start)
    const long NEG = -1;
    std::vector<long> best(n_turns + 1, NEG);
    best[0] = 0;
    for (std::size_t k = 1; k <= n_turns; ++k) {
        bool boundary = k == n_turns || allowed.count(k - 1);
        if (!boundary) continue;
        for (std::size_t j = 0; j + min_size <= k; ++j)
            if (best[j] != NEG) best[k] = std::max(best[k], best[j] + (k == n_turns ? 0 : 1));
    }
    return best[n_turns] == NEG ? 0 : std::size_t(best[n_turns]);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Connected components of the graph joining i, j when cos >= tau, as sets of
// indices, each component ordered and the list ordered by smallest index.
inline std::vector<std::vector<std::size_t>> components(
    const std::vector<std::vector<double>>& centroids, double tau) {
    const std::size_t n = centroids.size();
    std::vector<int> comp(n, -1);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] >= 0) continue;
        std::vector<std::size_t> stack{s}, members;
        comp[s] = int(out.size());
        while (!stack.empty()) {
            auto u = stack.back();
            stack.pop_back();
            members.push_back(u);
            for (std::size_t v = 0; v < n; ++v)
                if (comp[v] < 0 && cosine(centroids[u], centroids[v]) >= tau - 1e-12) {
                    comp[v] = comp[s];
                    stack.push_back(v);
                }
        }
        std::sort(members.begin(), members.end());
        out.push_back(members);
    }
    return out;
}

// A well-formed persona reply in the shipped response format.
struct PersonaReply {
    std::array<int, 5> scores{};
    std::array<std::string, 5> explanations;
    std::string overall;
    std::string text;
};

inline std::string random_sentence(std::mt19937_64& rng) {
    static const std::vector<std::string> words = {
        "calm",   "argues", "often",  "the",   "group", "quiet", "friendly", "rude",
        "jokes",  "about",  "others", "shows", "care",  "is",    "curious",  "loud",
        "(odd)",  "[sic]",  "50%",    "x,y",   "a.b",   "it's",  "\"quoted\"", "*emph*"};
    std::uniform_int_distribution<std::size_t> len(1, 14), pick(0, words.size() - 1);
    std::string out;
    for (std::size_t i = 0, n = len(rng); i < n; ++i) {
        if (i) out += ' ';
        out += words[pick(rng)];
    }
    return out + ".";
}

inline PersonaReply persona_reply(std::mt19937_64& rng) {
    static const std::array<std::string, 5> names = {"Openness to Experience", "Conscientiousness",
                                                     "Extraversion", "Agreeableness",
                                                     "Neuroticism"};
    std::uniform_int_distribution<int> score(1, 10), coin(0, 3);
    PersonaReply r;
    std::string list = "[";
    for (int i = 0; i < 5; ++i) {
        r.scores[i] = score(rng);
        list += (i ? (coin(rng) ? ", " : ",") : "") + std::to_string(r.scores[i]);
    }
    list += "]";
    const bool quoted = coin(rng) == 0;
    r.text = (quoted ? "\"" : "") + list + "\n\n";
    for (int i = 0; i < 5; ++i) {
        r.explanations[i] = random_sentence(rng);
        if (coin(rng) == 0) r.explanations[i] += "\n" + random_sentence(rng);
        r.text += "**" + names[i] + "**: " + r.explanations[i] + "\n\n";
    }
    r.overall = random_sentence(rng);
    r.text += "**Overall Persona Analysis**: " + r.overall + (quoted ? "\"" : "");
    return r;
}

}  // namespace oracle

#include "toxiscope/persona.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <regex>

namespace toxiscope {

using nlohmann::json;

const std::string_view kPersonaDisclaimer =
    "Research use only. Trait scores are inferred from conversation summaries by a language "
    "model, have not been clinically validated, and must not be used for professional diagnosis.";

const std::string_view kPersonaFormatReminder =
    "Your previous reply could not be read. Start the reply with exactly five integers from 1 "
    "to 10 in square brackets, then give the sections **Openness to Experience**:, "
    "**Conscientiousness**:, **Extraversion**:, **Agreeableness**:, **Neuroticism**: and "
    "**Overall Persona Analysis**:.";

std::string default_persona_template() {
    return read_file(std::filesystem::path(TOXISCOPE_RESOURCE_DIR) / "prompts" / "persona.txt");
}

std::string render_persona_prompt(const std::string& template_body, const std::string& speaker,
                                  const std::string& summary) {
    if (trim(summary).empty()) fail(ErrorCode::EmptySummary, "summary is empty");
    return substitute(template_body, {{"speaker", speaker}, {"summary", summary}}, '[', ']');
}

namespace {

struct Marker {
    std::size_t begin;  // start of the heading
    std::size_t body;   // first character after the colon
    int section;        // 0..4 traits, 5 overall
};

std::string escape_regex(std::string_view s) {
    static const std::string special = R"(\^$.|?*+()[]{})";
    std::string out;
    for (char c : s) {
        if (special.find(c) != std::string::npos) out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

// Accepts "**Name**:" and "**Name:**".
std::vector<Marker> find_markers(const std::string& text) {
    std::vector<Marker> out;
    for (int s = 0; s < 6; ++s) {
        std::string_view name = s < 5 ? kTraitNames[s] : kOverallSection;
        std::regex re(R"(\*\*\s*)" + escape_regex(name) + R"(\s*(\*\*\s*:|:\s*\*\*))",
                      std::regex::icase);
        std::smatch m;
        if (std::regex_search(text, m, re))
            out.push_back({static_cast<std::size_t>(m.position(0)),
                           static_cast<std::size_t>(m.position(0) + m.length(0)), s});
    }
    std::sort(out.begin(), out.end(),
              [](const Marker& a, const Marker& b) { return a.begin < b.begin; });
    return out;
}

int clamp_score(const std::string& digits, std::size_t trait, std::vector<std::string>& warnings) {
    long long value;
    bool negative = !digits.empty() && digits[0] == '-';
    std::string magnitude = negative ? digits.substr(1) : digits;
    magnitude.erase(0, std::min(magnitude.find_first_not_of('0'), magnitude.size()));
    if (magnitude.size() > 6)
        value = negative ? -1000000 : 1000000;
    else
        value = std::stoll(digits);
    if (value >= 1 && value <= 10) return static_cast<int>(value);
    int clamped = value < 1 ? 1 : 10;
    warnings.push_back(std::string(kTraitKeys[trait]) + " score " + digits + " clamped to " +
                       std::to_string(clamped));
    return clamped;
}

}  // namespace

PersonaParse parse_persona_response(std::string_view text_view) {
    const std::string text(text_view);
    static const std::regex five_ints(
        R"(\[\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*\])");
    std::smatch m;
    if (!std::regex_search(text, m, five_ints))
        fail(ErrorCode::ParseFailure, "no bracketed list of five integers");

    PersonaParse out;
    for (std::size_t i = 0; i < 5; ++i) {
        std::string digits = m[i + 1].str();
        if (digits[0] == '+') digits.erase(0, 1);
        out.scores[i] = clamp_score(digits, i, out.warnings);
    }

    auto markers = find_markers(text);
    std::array<bool, 6> seen{};
    for (std::size_t k = 0; k < markers.size(); ++k) {
        std::size_t end = k + 1 < markers.size() ? markers[k + 1].begin : text.size();
        std::string body(trim(std::string_view(text).substr(markers[k].body,
                                                            end - markers[k].body)));
        // the format sample wraps the whole reply in quotes
        if (k + 1 == markers.size() && !body.empty() && body.back() == '"') {
            body.pop_back();
            body = std::string(trim(body));
        }
        int s = markers[k].section;
        seen[s] = true;
        if (s < 5)
            out.explanations[s] = std::move(body);
        else
            out.overall = std::move(body);
    }
    for (int s = 0; s < 6; ++s)
        if (!seen[s])
            fail(ErrorCode::ParseFailure,
                 "missing section '" + std::string(s < 5 ? kTraitNames[s] : kOverallSection) + "'");
    return out;
}

PersonaProfile analyze_persona(const std::string& speaker,
                               const std::vector<std::string>& summaries, LmGateway& gateway,
                               const std::string& provider_id, const std::string& template_body,
                               const ChatParams& params) {
    const std::string concatenated = join(summaries, "\n\n");
    const std::string prompt = render_persona_prompt(template_body, speaker, concatenated);
    if (!gateway.provider(provider_id).has(Capability::Chat))
        fail(ErrorCode::CapabilityMissing, "provider '" + provider_id + "' cannot chat");

    auto attempt = [&](const std::string& content) {
        return parse_persona_response(gateway.chat(provider_id, {{"user", content}}, params));
    };
    PersonaParse parsed;
    try {
        parsed = attempt(prompt);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ParseFailure) throw;
        spdlog::info("persona reply for {} did not parse ({}), retrying", speaker, e.what());
        parsed = attempt(prompt + "\n\n" + std::string(kPersonaFormatReminder));
    }

    PersonaProfile profile;
    profile.speaker = speaker;
    profile.scores = parsed.scores;
    profile.explanations = std::move(parsed.explanations);
    profile.overall = std::move(parsed.overall);
    profile.warnings = std::move(parsed.warnings);
    profile.source_summary_hash = sha256_hex(concatenated);
    return profile;
}

json to_json(const PersonaProfile& profile) {
    json scores = json::object(), explanations = json::object();
    for (std::size_t i = 0; i < 5; ++i) {
        scores[std::string(kTraitKeys[i])] = profile.scores[i];
        explanations[std::string(kTraitKeys[i])] = profile.explanations[i];
    }
    return {{"speaker", profile.speaker},
            {"scores", scores},
            {"explanations", explanations},
            {"overall", profile.overall},
            {"warnings", profile.warnings},
            {"source_summary_hash", profile.source_summary_hash},
            {"disclaimer", std::string(kPersonaDisclaimer)}};
}

}  // namespace toxiscope

#pragma once

#include "toxiscope/lm_gateway.hpp"

#include "json.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace toxiscope {

inline constexpr std::array<std::string_view, 5> kTraitNames = {
    "Openness to Experience", "Conscientiousness", "Extraversion", "Agreeableness",
    "Neuroticism"};
inline constexpr std::array<std::string_view, 5> kTraitKeys = {
    "openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism"};
inline constexpr std::string_view kOverallSection = "Overall Persona Analysis";

extern const std::string_view kPersonaDisclaimer;
/// Appended to the prompt on the retry after a malformed reply.
extern const std::string_view kPersonaFormatReminder;

struct PersonaParse {
    std::array<int, 5> scores{};
    std::array<std::string, 5> explanations;
    std::string overall;
    std::vector<std::string> warnings;
};

struct PersonaProfile {
    std::string speaker;
    std::array<int, 5> scores{};
    std::array<std::string, 5> explanations;
    std::string overall;
    std::vector<std::string> warnings;
    std::string source_summary_hash;
};

/// Shipped prompt (resources/prompts/persona.txt).
std::string default_persona_template();

/// Replaces [speaker] and [summary] verbatim, in one pass.
std::string render_persona_prompt(const std::string& template_body, const std::string& speaker,
                                  const std::string& summary);

/// First bracketed list of exactly five integers, then the five trait
/// sections and the overall section. Out-of-range scores clamp to [1, 10]
/// with a warning.
PersonaParse parse_persona_response(std::string_view text);

/// Summaries must already be in chronological order; they are joined with
/// blank lines. One chat call, plus one retry if the reply does not parse.
PersonaProfile analyze_persona(const std::string& speaker,
                               const std::vector<std::string>& summaries, LmGateway& gateway,
                               const std::string& provider_id,
                               const std::string& template_body = default_persona_template(),
                               const ChatParams& params = {});

nlohmann::json to_json(const PersonaProfile& profile);

}  // namespace toxiscope

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace rd {

/// The 32 EmpatheticDialogues emotion labels.
enum class Emotion : std::uint8_t {
    surprised, proud, impressed, nostalgic, trusting, faithful, prepared, excited,
    confident, joyful, grateful, content, caring, angry, disappointed, hopeful,
    sentimental, anticipating, lonely, afraid, anxious, guilty, embarrassed, sad,
    apprehensive, terrified, jealous, devastated, annoyed, furious, ashamed, disgusted,
};
inline constexpr std::size_t kNumEmotions = 32;

enum class Intent : std::uint8_t {
    questioning, acknowledging, consoling, agreeing, encouraging,
    sympathizing, suggesting, wishing, neutral,
};
inline constexpr std::size_t kNumIntents = 9;

enum class Polarity : std::uint8_t { pos, neg, neu };

enum class Speaker : std::uint8_t { user, bot };

/// Per-token emotion-reason tag. Index order is the CRF state order.
enum class ReasonTag : std::uint8_t { noem = 0, em = 1 };
inline constexpr std::size_t kNumTags = 2;

std::string_view to_string(Emotion e);
std::string_view to_string(Intent i);
std::string_view to_string(Polarity p);
std::string_view to_string(Speaker s);
std::string_view to_string(ReasonTag t);

std::optional<Emotion> parse_emotion(std::string_view s);
std::optional<Intent> parse_intent(std::string_view s);
std::optional<Speaker> parse_speaker(std::string_view s);
std::optional<ReasonTag> parse_tag(std::string_view s);

/// Label-level polarity. No emotion is neutral at this level.
Polarity polarity(Emotion e);

const std::array<Emotion, kNumEmotions>& all_emotions();
const std::array<Intent, kNumIntents>& all_intents();

inline std::size_t index(Emotion e) { return static_cast<std::size_t>(e); }
inline std::size_t index(Intent i) { return static_cast<std::size_t>(i); }
inline std::size_t index(ReasonTag t) { return static_cast<std::size_t>(t); }

}  // namespace rd

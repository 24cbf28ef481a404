#include "reflectdiffu/labels.hpp"

namespace rd {

namespace {

constexpr std::array<std::string_view, kNumEmotions> kEmotionNames{
    "surprised", "proud",        "impressed", "nostalgic",    "trusting",    "faithful", "prepared",
    "excited",   "confident",    "joyful",    "grateful",     "content",     "caring",   "angry",
    "disappointed", "hopeful",   "sentimental", "anticipating", "lonely",    "afraid",   "anxious",
    "guilty",    "embarrassed",  "sad",       "apprehensive", "terrified",   "jealous",  "devastated",
    "annoyed",   "furious",      "ashamed",   "disgusted",
};

constexpr std::array<std::string_view, kNumIntents> kIntentNames{
    "questioning", "acknowledging", "consoling", "agreeing", "encouraging",
    "sympathizing", "suggesting", "wishing", "neutral",
};

}  // namespace

std::string_view to_string(Emotion e) { return kEmotionNames[index(e)]; }
std::string_view to_string(Intent i) { return kIntentNames[index(i)]; }

std::string_view to_string(Polarity p) {
    switch (p) {
        case Polarity::pos: return "pos";
        case Polarity::neg: return "neg";
        case Polarity::neu: return "neu";
    }
    return "neu";
}

std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "bot"; }
std::string_view to_string(ReasonTag t) { return t == ReasonTag::em ? "em" : "noem"; }

std::optional<Emotion> parse_emotion(std::string_view s) {
    for (std::size_t i = 0; i < kNumEmotions; ++i)
        if (kEmotionNames[i] == s) return static_cast<Emotion>(i);
    return std::nullopt;
}

std::optional<Intent> parse_intent(std::string_view s) {
    for (std::size_t i = 0; i < kNumIntents; ++i)
        if (kIntentNames[i] == s) return static_cast<Intent>(i);
    return std::nullopt;
}

std::optional<Speaker> parse_speaker(std::string_view s) {
    if (s == "user") return Speaker::user;
    if (s == "bot") return Speaker::bot;
    return std::nullopt;
}

std::optional<ReasonTag> parse_tag(std::string_view s) {
    if (s == "em") return ReasonTag::em;
    if (s == "noem") return ReasonTag::noem;
    return std::nullopt;
}

Polarity polarity(Emotion e) {
    switch (e) {
        case Emotion::surprised:
        case Emotion::proud:
        case Emotion::impressed:
        case Emotion::nostalgic:
        case Emotion::trusting:
        case Emotion::faithful:
        case Emotion::prepared:
        case Emotion::excited:
        case Emotion::confident:
        case Emotion::joyful:
        case Emotion::grateful:
        case Emotion::content:
        case Emotion::caring:
        case Emotion::hopeful:
        case Emotion::anticipating:
            return Polarity::pos;
        default:
            return Polarity::neg;
    }
}

const std::array<Emotion, kNumEmotions>& all_emotions() {
    static const auto values = [] {
        std::array<Emotion, kNumEmotions> out{};
        for (std::size_t i = 0; i < kNumEmotions; ++i) out[i] = static_cast<Emotion>(i);
        return out;
    }();
    return values;
}

const std::array<Intent, kNumIntents>& all_intents() {
    static const auto values = [] {
        std::array<Intent, kNumIntents> out{};
        for (std::size_t i = 0; i < kNumIntents; ++i) out[i] = static_cast<Intent>(i);
        return out;
    }();
    return values;
}

}  // namespace rd

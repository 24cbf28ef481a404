#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "reflectdiffu/labels.hpp"

namespace rd {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kSos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kCtx = 4;
inline constexpr std::size_t kNumSpecials = 5;

class CorpusError : public std::runtime_error {
public:
    CorpusError(const std::string& message, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Lowercases, splits on whitespace, and emits every ASCII punctuation
/// character as its own token. Bytes >= 0x80 are kept as word characters.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
public:
    Vocab();

    /// Adds a token if new and returns its id. Special spellings are refused.
    TokenId add(const std::string& token);
    TokenId id(const std::string& token) const;  // UNK when absent
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    const std::string& token(TokenId id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    static bool is_special(TokenId id) { return id < kNumSpecials; }
    static Vocab from_tokens(const std::vector<std::string>& tokens);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

struct Turn {
    Speaker speaker = Speaker::user;
    std::string text;
    std::vector<std::string> words;  // surface tokens, aligned with tokens
    std::vector<TokenId> tokens;
    std::vector<ReasonTag> reason_tags;
    std::optional<Emotion> emotion;
    std::optional<Intent> intent;

    bool operator==(const Turn&) const = default;
};

struct Dialogue {
    std::string id;
    std::vector<Turn> turns;
    std::size_t target = 0;  // index of the response turn

    const Turn& target_response() const { return turns.at(target); }
    /// Emotion of the latest labelled user turn before the target.
    std::optional<Emotion> emotion() const;
    std::optional<Intent> intent() const { return target_response().intent; }

    bool operator==(const Dialogue&) const = default;
};

struct Corpus {
    std::vector<Dialogue> dialogues;
    Vocab vocab;
};

enum class VocabMode { build, reuse };

/// Throws CorpusError if any Turn/Dialogue invariant is violated.
void validate(const Dialogue& d);

/// Re-derives words and token ids from text. Under build mode new words are
/// added to the vocabulary, otherwise they map to UNK.
void assign_tokens(Dialogue& d, Vocab& vocab, VocabMode mode);

Corpus load_corpus(const std::filesystem::path& path, VocabMode mode = VocabMode::build,
                   const Vocab* existing = nullptr);
Dialogue parse_dialogue_line(std::string_view line, Vocab& vocab, VocabMode mode, std::size_t line_no = 0);
std::string dialogue_to_json(const Dialogue& d);
void save_corpus(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

/// Flattened history preceding the target turn, truncated oldest-turn-first
/// so that it fits into max_tokens.
struct ContextView {
    std::vector<TokenId> tokens;
    std::vector<std::string> words;
    std::vector<ReasonTag> tags;
    std::vector<Speaker> speakers;
    std::size_t first_turn = 0;  // index of the oldest turn kept
};
ContextView flatten_context(const Dialogue& d, std::size_t max_tokens);
ContextView flatten_context(const Dialogue& d, std::size_t max_tokens, std::size_t upto_turn);

struct SyntheticSpec {
    std::uint64_t seed = 1;
    long n_dialogues = 500;
    long n_emotions = 4;
    long n_intents = 4;
};

/// Ordered label pools the generator draws from: the first n entries are used.
const std::vector<Emotion>& synthetic_emotion_order();
const std::vector<Intent>& synthetic_intent_order();

/// Templated dialogues whose emotion is named by a keyword (the only `em`
/// token), whose intent is signalled by a cue phrase, and whose response is
/// an intent-specific template.
Corpus generate_synthetic(const SyntheticSpec& spec);

/// Keyword-lookup oracle over a synthetic dialogue's user turns.
std::optional<Emotion> keyword_emotion(const Dialogue& d);
std::optional<Intent> keyword_intent(const Dialogue& d);

}  // namespace rd

#include "reflectdiffu/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <json.hpp>
#include <sstream>

#include "reflectdiffu/rng.hpp"

namespace rd {

using json = nlohmann::ordered_json;

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isspace(c)) {
            flush();
        } else if (c < 0x80 && std::ispunct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    flush();
    return out;
}

// ---------------------------------------------------------------------------

namespace {
const std::vector<std::string> kSpecialSpellings{"<pad>", "<unk>", "<sos>", "<eos>", "<ctx>"};
}

Vocab::Vocab() {
    for (const auto& s : kSpecialSpellings) {
        index_[s] = static_cast<TokenId>(tokens_.size());
        tokens_.push_back(s);
    }
}

TokenId Vocab::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) {
        if (is_special(it->second)) throw CorpusError("special token spelling cannot be added: " + token);
        return it->second;
    }
    const auto id = static_cast<TokenId>(tokens_.size());
    index_[token] = id;
    tokens_.push_back(token);
    return id;
}

TokenId Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id >= tokens_.size()) throw std::out_of_range("Vocab::token: id out of range");
    return tokens_[id];
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < kNumSpecials || !std::equal(kSpecialSpellings.begin(), kSpecialSpellings.end(), tokens.begin()))
        throw CorpusError("vocabulary must start with the five special tokens");
    Vocab v;
    for (std::size_t i = kNumSpecials; i < tokens.size(); ++i) {
        if (v.contains(tokens[i])) throw CorpusError("duplicate vocabulary entry: " + tokens[i]);
        v.add(tokens[i]);
    }
    return v;
}

// ---------------------------------------------------------------------------

std::optional<Emotion> Dialogue::emotion() const {
    for (std::size_t i = std::min(target, turns.size()); i-- > 0;)
        if (turns[i].speaker == Speaker::user && turns[i].emotion) return turns[i].emotion;
    return std::nullopt;
}

void validate(const Dialogue& d) {
    if (d.turns.empty()) throw CorpusError("dialogue " + d.id + " has no turns");
    if (d.target >= d.turns.size()) throw CorpusError("dialogue " + d.id + ": target index out of range");
    if (d.turns[d.target].speaker != Speaker::bot) throw CorpusError("dialogue " + d.id + ": target must be a bot turn");
    bool user_before = false;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        const Turn& t = d.turns[i];
        if (t.reason_tags.size() != t.tokens.size())
            throw CorpusError("dialogue " + d.id + ": reason_tags length " + std::to_string(t.reason_tags.size()) +
                              " does not match " + std::to_string(t.tokens.size()) + " tokens in turn " +
                              std::to_string(i));
        if (t.words.size() != t.tokens.size()) throw CorpusError("dialogue " + d.id + ": words/tokens misaligned");
        if (i > 0 && t.speaker == d.turns[i - 1].speaker)
            throw CorpusError("dialogue " + d.id + ": speakers must alternate (turn " + std::to_string(i) + ")");
        if (t.speaker == Speaker::bot &&
            std::any_of(t.reason_tags.begin(), t.reason_tags.end(), [](ReasonTag r) { return r == ReasonTag::em; }))
            throw CorpusError("dialogue " + d.id + ": bot turn " + std::to_string(i) + " carries an em tag");
        if (i < d.target && t.speaker == Speaker::user) user_before = true;
    }
    if (!user_before) throw CorpusError("dialogue " + d.id + ": no user turn before the target");
}

void assign_tokens(Dialogue& d, Vocab& vocab, VocabMode mode) {
    for (Turn& t : d.turns) {
        t.words = tokenize(t.text);
        t.tokens.clear();
        for (const auto& w : t.words) t.tokens.push_back(mode == VocabMode::build ? vocab.add(w) : vocab.id(w));
    }
}

Dialogue parse_dialogue_line(std::string_view line, Vocab& vocab, VocabMode mode, std::size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw CorpusError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    try {
        if (!j.is_object()) throw CorpusError("record must be a JSON object", line_no);
        Dialogue d;
        d.id = j.at("id").get<std::string>();
        const auto& turns = j.at("turns");
        if (!turns.is_array()) throw CorpusError("turns must be an array", line_no);
        for (const auto& jt : turns) {
            Turn t;
            const auto speaker = parse_speaker(jt.at("speaker").get<std::string>());
            if (!speaker) throw CorpusError("unknown speaker: " + jt.at("speaker").dump(), line_no);
            t.speaker = *speaker;
            t.text = jt.at("text").get<std::string>();
            if (jt.contains("emotion") && !jt["emotion"].is_null()) {
                const auto name = jt["emotion"].get<std::string>();
                t.emotion = parse_emotion(name);
                if (!t.emotion) throw CorpusError("unknown emotion: " + name, line_no);
            }
            if (jt.contains("intent") && !jt["intent"].is_null()) {
                const auto name = jt["intent"].get<std::string>();
                t.intent = parse_intent(name);
                if (!t.intent) throw CorpusError("unknown intent: " + name, line_no);
            }
            if (jt.contains("reason_tags") && !jt["reason_tags"].is_null()) {
                for (const auto& tag : jt["reason_tags"]) {
                    const auto r = parse_tag(tag.get<std::string>());
                    if (!r) throw CorpusError("unknown reason tag: " + tag.dump(), line_no);
                    t.reason_tags.push_back(*r);
                }
            }
            d.turns.push_back(std::move(t));
        }
        const auto target = j.at("target").get<long long>();
        if (target < 0) throw CorpusError("target must be non-negative", line_no);
        d.target = static_cast<std::size_t>(target);

        assign_tokens(d, vocab, mode);
        for (std::size_t i = 0; i < d.turns.size(); ++i) {
            Turn& t = d.turns[i];
            const bool tags_given = turns[i].contains("reason_tags") && !turns[i]["reason_tags"].is_null();
            if (!tags_given) t.reason_tags.assign(t.tokens.size(), ReasonTag::noem);
        }
        validate(d);
        return d;
    } catch (const CorpusError& e) {
        if (e.line()) throw;
        throw CorpusError(e.what(), line_no);
    } catch (const json::exception& e) {
        throw CorpusError(std::string("invalid record: ") + e.what(), line_no);
    }
}

Corpus load_corpus(const std::filesystem::path& path, VocabMode mode, const Vocab* existing) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open corpus file: " + path.string());
    if (mode == VocabMode::reuse && !existing) throw CorpusError("reuse mode requires an existing vocabulary");
    Corpus corpus;
    if (existing) corpus.vocab = *existing;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        corpus.dialogues.push_back(parse_dialogue_line(line, corpus.vocab, mode, line_no));
    }
    return corpus;
}

std::string dialogue_to_json(const Dialogue& d) {
    json j;
    j["id"] = d.id;
    j["turns"] = json::array();
    for (const Turn& t : d.turns) {
        json jt;
        jt["speaker"] = std::string(to_string(t.speaker));
        jt["text"] = t.text;
        jt["reason_tags"] = json::array();
        for (ReasonTag r : t.reason_tags) jt["reason_tags"].push_back(std::string(to_string(r)));
        jt["emotion"] = t.emotion ? json(std::string(to_string(*t.emotion))) : json(nullptr);
        jt["intent"] = t.intent ? json(std::string(to_string(*t.intent))) : json(nullptr);
        j["turns"].push_back(std::move(jt));
    }
    j["target"] = d.target;
    return j.dump();
}

void save_corpus(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write corpus file: " + path.string());
    for (const auto& d : dialogues) out << dialogue_to_json(d) << '\n';
    if (!out) throw CorpusError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

ContextView flatten_context(const Dialogue& d, std::size_t max_tokens) {
    return flatten_context(d, max_tokens, d.target);
}

ContextView flatten_context(const Dialogue& d, std::size_t max_tokens, std::size_t upto_turn) {
    upto_turn = std::min(upto_turn, d.turns.size());
    std::size_t first = upto_turn;
    std::size_t total = 0;
    while (first > 0 && total + d.turns[first - 1].tokens.size() <= max_tokens) {
        total += d.turns[first - 1].tokens.size();
        --first;
    }
    ContextView view;
    // The newest turn alone overflows: keep its tail.
    if (first == upto_turn && upto_turn > 0) {
        const Turn& t = d.turns[upto_turn - 1];
        const std::size_t skip = t.tokens.size() - std::min(t.tokens.size(), max_tokens);
        view.first_turn = upto_turn - 1;
        for (std::size_t i = skip; i < t.tokens.size(); ++i) {
            view.tokens.push_back(t.tokens[i]);
            view.words.push_back(t.words[i]);
            view.tags.push_back(t.reason_tags[i]);
            view.speakers.push_back(t.speaker);
        }
        return view;
    }
    view.first_turn = first;
    for (std::size_t k = first; k < upto_turn; ++k) {
        const Turn& t = d.turns[k];
        view.tokens.insert(view.tokens.end(), t.tokens.begin(), t.tokens.end());
        view.words.insert(view.words.end(), t.words.begin(), t.words.end());
        view.tags.insert(view.tags.end(), t.reason_tags.begin(), t.reason_tags.end());
        view.speakers.insert(view.speakers.end(), t.tokens.size(), t.speaker);
    }
    return view;
}

// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kSituations{
    "exam",   "job",     "car",       "house",     "dog",      "trip",    "party",   "boss",
    "sister", "brother", "garden",    "phone",     "wedding",  "interview", "neighbor", "concert",
    "team",   "project", "landlord",  "flight",    "kitten",   "promotion", "recital", "game",
};

const std::vector<std::string> kOpeners{"", "well , ", "honestly , ", "hey , "};

// {emo} is the emotion keyword, {sit} the situation noun.
const std::vector<std::string> kEmotionClauses{
    "i feel so {emo} about my {sit} .",
    "i am really {emo} about the {sit} .",
    "my {sit} left me {emo} .",
};

const std::vector<std::string> kFillers{
    "oh , tell me more .",
    "really ? what happened then ?",
    "i see . go on .",
};

std::string cue_for(Intent i) {
    switch (i) {
        case Intent::questioning: return "i do not know why .";
        case Intent::acknowledging: return "it happened last week .";
        case Intent::consoling: return "it hurts a lot .";
        case Intent::agreeing: return "everyone says so .";
        case Intent::encouraging: return "i will try again tomorrow .";
        case Intent::sympathizing: return "nobody else was there .";
        case Intent::suggesting: return "what should i do ?";
        case Intent::wishing: return "the results come soon .";
        case Intent::neutral: return "just wanted to share .";
    }
    return "";
}

std::string response_for(Intent i) {
    switch (i) {
        case Intent::questioning: return "why do you think the {sit} made you {emo} ?";
        case Intent::acknowledging: return "i see , a {sit} can make anyone {emo} .";
        case Intent::consoling: return "i am sorry you feel {emo} about your {sit} .";
        case Intent::agreeing: return "you are right , the {sit} sounds {emo} .";
        case Intent::encouraging: return "do not give up , your {sit} will get better !";
        case Intent::sympathizing: return "i understand how {emo} the {sit} made you .";
        case Intent::suggesting: return "maybe talk to a friend about the {sit} .";
        case Intent::wishing: return "i hope the {sit} goes well for you .";
        case Intent::neutral: return "thanks for telling me about the {sit} .";
    }
    return "";
}

std::string fill(std::string tmpl, const std::string& emo, const std::string& sit) {
    auto replace = [&](const std::string& key, const std::string& value) {
        for (auto pos = tmpl.find(key); pos != std::string::npos; pos = tmpl.find(key, pos + value.size()))
            tmpl.replace(pos, key.size(), value);
    };
    replace("{emo}", emo);
    replace("{sit}", sit);
    return tmpl;
}

Turn make_turn(Speaker speaker, std::string text, const std::string& keyword) {
    Turn t;
    t.speaker = speaker;
    t.text = std::move(text);
    t.words = tokenize(t.text);
    for (const auto& w : t.words)
        t.reason_tags.push_back(speaker == Speaker::user && w == keyword ? ReasonTag::em : ReasonTag::noem);
    return t;
}

}  // namespace

const std::vector<Emotion>& synthetic_emotion_order() {
    // Alternates polarity so any prefix covers both groups.
    static const std::vector<Emotion> order{
        Emotion::joyful,       Emotion::terrified,    Emotion::surprised,  Emotion::angry,
        Emotion::hopeful,      Emotion::sad,          Emotion::proud,      Emotion::lonely,
        Emotion::excited,      Emotion::anxious,      Emotion::grateful,   Emotion::afraid,
        Emotion::confident,    Emotion::disappointed, Emotion::content,    Emotion::guilty,
        Emotion::impressed,    Emotion::embarrassed,  Emotion::caring,     Emotion::apprehensive,
        Emotion::nostalgic,    Emotion::jealous,      Emotion::trusting,   Emotion::devastated,
        Emotion::faithful,     Emotion::annoyed,      Emotion::prepared,   Emotion::furious,
        Emotion::anticipating, Emotion::ashamed,      Emotion::sentimental, Emotion::disgusted,
    };
    return order;
}

const std::vector<Intent>& synthetic_intent_order() {
    static const std::vector<Intent> order{
        Intent::consoling,  Intent::encouraging, Intent::acknowledging, Intent::questioning, Intent::suggesting,
        Intent::sympathizing, Intent::wishing,   Intent::agreeing,      Intent::neutral,
    };
    return order;
}

Corpus generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_dialogues <= 0) throw CorpusError("n_dialogues must be positive");
    if (spec.n_emotions <= 0 || spec.n_emotions > static_cast<long>(kNumEmotions))
        throw CorpusError("n_emotions must be in [1, 32]");
    if (spec.n_intents <= 0 || spec.n_intents > static_cast<long>(kNumIntents))
        throw CorpusError("n_intents must be in [1, 9]");

    Rng rng(spec.seed);
    const auto n = static_cast<std::size_t>(spec.n_dialogues);
    const auto ne = static_cast<std::size_t>(spec.n_emotions);
    const auto ni = static_cast<std::size_t>(spec.n_intents);

    // Each block of lcm(ne, ni) dialogues shifts the intent cycle by one, so
    // both marginals stay balanced for any n and every pair eventually occurs.
    const std::size_t block = std::lcm(ne, ni);
    std::vector<Dialogue> dialogues;
    dialogues.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Emotion emo = synthetic_emotion_order()[i % ne];
        const Intent intent = synthetic_intent_order()[(i + i / block) % ni];
        const std::string keyword(to_string(emo));
        const std::string& sit = kSituations[rng.below(kSituations.size())];
        const std::string& opener = kOpeners[rng.below(kOpeners.size())];
        const std::string clause = fill(kEmotionClauses[rng.below(kEmotionClauses.size())], keyword, sit);
        const bool three_turns = rng.below(2) == 1;

        Dialogue d;
        if (three_turns) {
            d.turns.push_back(make_turn(Speaker::user, opener + clause, keyword));
            d.turns.push_back(make_turn(Speaker::bot, kFillers[rng.below(kFillers.size())], keyword));
            d.turns.push_back(make_turn(Speaker::user, cue_for(intent), keyword));
        } else {
            d.turns.push_back(make_turn(Speaker::user, opener + clause + " " + cue_for(intent), keyword));
        }
        for (Turn& t : d.turns)
            if (t.speaker == Speaker::user) t.emotion = emo;
        Turn response = make_turn(Speaker::bot, fill(response_for(intent), keyword, sit), keyword);
        response.intent = intent;
        d.turns.push_back(std::move(response));
        d.target = d.turns.size() - 1;
        dialogues.push_back(std::move(d));
    }
    rng.shuffle(dialogues);

    Corpus corpus;
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        std::ostringstream id;
        id << "synth-" << spec.seed << '-' << i;
        dialogues[i].id = id.str();
        for (Turn& t : dialogues[i].turns) {
            t.tokens.clear();
            for (const auto& w : t.words) t.tokens.push_back(corpus.vocab.add(w));
        }
        validate(dialogues[i]);
    }
    corpus.dialogues = std::move(dialogues);
    return corpus;
}

std::optional<Emotion> keyword_emotion(const Dialogue& d) {
    for (std::size_t k = 0; k < d.target; ++k) {
        if (d.turns[k].speaker != Speaker::user) continue;
        for (const auto& w : d.turns[k].words)
            if (auto e = parse_emotion(w)) return e;
    }
    return std::nullopt;
}

std::optional<Intent> keyword_intent(const Dialogue& d) {
    std::string flat;
    for (std::size_t k = 0; k < d.target; ++k) {
        if (d.turns[k].speaker != Speaker::user) continue;
        for (const auto& w : d.turns[k].words) flat += w + " ";
    }
    for (Intent i : all_intents())
        if (flat.find(cue_for(i)) != std::string::npos) return i;
    return std::nullopt;
}

}  // namespace rd

// reflectdiffu: synth / train / generate / eval / annotate.
// Exit codes: 0 ok, 2 bad arguments or schema, 3 training diverged, 4 artifact mismatch.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "reflectdiffu/checkpoint.hpp"
#include "reflectdiffu/evaluation.hpp"

using namespace rd;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kUsage = 2;
constexpr int kDiverged = 3;
constexpr int kMismatch = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
    if (!std::filesystem::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + path.string());
    return out;
}

LoadedCheckpoint open_checkpoint(const std::string& path) {
    require_file(path, "checkpoint");
    return load_checkpoint(path);
}

Corpus read_for_model(const std::string& path, const ReflectDiffu& model) {
    require_file(path, "data file");
    return load_corpus(path, VocabMode::reuse, &model.vocab());
}

std::vector<Emotion> emotions_present(const std::vector<Dialogue>& ds) {
    std::set<Emotion> seen;
    for (const auto& d : ds)
        if (auto e = d.emotion()) seen.insert(*e);
    return {seen.begin(), seen.end()};
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::uint64_t seed = 1;
    long n = 500;
    long emotions = 4, intents = 4;
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    if (a.n <= 0) throw UsageError("--n must be positive");
    if (a.emotions < 1 || a.emotions > 32) throw UsageError("--emotions must lie in [1, 32]");
    if (a.intents < 1 || a.intents > 9) throw UsageError("--intents must lie in [1, 9]");
    SyntheticSpec spec{a.seed, a.n, a.emotions, a.intents};
    const Corpus c = generate_synthetic(spec);
    save_corpus(a.out, c.dialogues);

    std::map<std::string, long> emo, intent;
    for (const auto& d : c.dialogues) {
        ++emo[std::string(to_string(*d.emotion()))];
        ++intent[std::string(to_string(*d.intent()))];
    }
    std::cout << "emotion histogram (" << c.dialogues.size() << " dialogues)\n";
    for (const auto& [k, v] : emo) std::cout << "  " << k << ' ' << v << '\n';
    std::cout << "intent histogram\n";
    for (const auto& [k, v] : intent) std::cout << "  " << k << ' ' << v << '\n';
    std::cout << "vocabulary " << c.vocab.size() << " tokens\n";
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config, data, out;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    if (!a.data.empty()) cfg.data.corpus = a.data;

    Corpus corpus;
    if (cfg.data.corpus) {
        require_file(*cfg.data.corpus, "data file");
        corpus = load_corpus(*cfg.data.corpus);
    } else {
        corpus = generate_synthetic(cfg.data.synthetic);
    }
    if (corpus.dialogues.empty()) throw UsageError("corpus is empty");
    for (const auto& d : corpus.dialogues) require_labels(d);

    Split split = split_corpus(corpus.dialogues, cfg.data.split_seed, cfg.data.train_frac, cfg.data.val_frac);
    if (split.train.empty()) throw UsageError("training split is empty");
    inject_emotion_noise(split.train, cfg.data.emotion_noise, emotions_present(corpus.dialogues),
                         cfg.data.split_seed ^ 0x6e6f697365ULL);

    const std::filesystem::path out = a.out;
    std::filesystem::create_directories(out);
    save_corpus(out / "train.jsonl", split.train);
    save_corpus(out / "val.jsonl", split.val);
    save_corpus(out / "test.jsonl", split.test);
    open_out(out / "config.json") << to_json(cfg).dump(2) << '\n';

    ModelConfig mc = cfg.model;
    mc.vocab_size = corpus.vocab.size();
    ReflectDiffu model(mc, corpus.vocab);
    Adam optimizer(model.parameters().trainable());

    std::ofstream log = open_out(out / "train_log.csv");
    write_log_header(log);
    auto on_row = [&](const LogRow& r) {
        write_log_row(log, r);
        if (!a.quiet && !std::isnan(r.val_l))
            std::cerr << "step " << r.step << "  L " << r.l << "  val " << r.val_l << '\n';
    };

    FitResult result;
    try {
        result = fit(model, split.train, split.val, cfg.train, &optimizer, on_row);
    } catch (const DivergenceError& e) {
        log.flush();
        std::cerr << "error: " << e.what() << '\n';
        return kDiverged;
    }
    log.flush();
    save_checkpoint(out / "model.ckpt", model, &optimizer);

    std::cout << "steps " << result.steps << '\n';
    if (result.best_step) std::cout << "best_val " << result.best_val << " at step " << result.best_step << '\n';
    if (result.early_stopped) std::cout << "early stopped\n";
    std::cout << "checkpoint " << (out / "model.ckpt").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------- generate

struct GenArgs {
    std::string ckpt, input, out;
    std::size_t top_k = 0, max_len = 30;
    std::uint64_t seed = 1;
};

int cmd_generate(const GenArgs& a) {
    const auto ck = open_checkpoint(a.ckpt);
    const Corpus data = read_for_model(a.input, *ck.model);
    GenerateOptions opt{a.max_len, a.top_k};
    Rng sampler(a.seed);
    std::ofstream out = open_out(a.out);
    for (const Dialogue& d : data.dialogues) {
        const Prediction p = ck.model->predict(d, opt, a.top_k ? &sampler : nullptr);
        std::string text;
        for (const auto& w : p.response.words) text += (text.empty() ? "" : " ") + w;
        ordered_json row;
        row["id"] = d.id;
        row["response"] = text;
        row["emotion"] = to_string(p.emotion);
        row["intent_first"] = to_string(p.intent_first);
        row["intent_twice"] = to_string(p.intent_twice);
        out << row.dump() << '\n';
    }
    std::cout << "generated " << data.dialogues.size() << " responses\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string ckpt, data, hyp, out;
    std::size_t top_k = 0, max_len = 30;
    std::uint64_t seed = 1;
};

std::vector<Sentence> read_hypotheses(const std::string& path) {
    require_file(path, "hypothesis file");
    std::ifstream in(path);
    std::vector<Sentence> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            throw UsageError(path + ":" + std::to_string(n) + ": malformed JSON");
        }
        if (j.contains("response") && j["response"].is_string()) {
            out.push_back(tokenize(j["response"].get<std::string>()));
        } else if (j.contains("turns") && j.contains("target")) {  // a corpus record: score its gold response
            Vocab scratch;
            out.push_back(parse_dialogue_line(line, scratch, VocabMode::build, n).target_response().words);
        } else {
            throw UsageError(path + ":" + std::to_string(n) + ": expected a \"response\" field");
        }
    }
    return out;
}

int cmd_eval(const EvalArgs& a) {
    ordered_json report;
    if (!a.hyp.empty()) {
        if (!a.ckpt.empty()) throw UsageError("--hyp and --ckpt are exclusive");
        require_file(a.data, "data file");
        const Corpus data = load_corpus(a.data);
        const auto hyp = read_hypotheses(a.hyp);
        if (hyp.size() != data.dialogues.size())
            throw UsageError("hypothesis count " + std::to_string(hyp.size()) + " differs from data count " +
                             std::to_string(data.dialogues.size()));
        std::vector<Sentence> ref;
        for (const auto& d : data.dialogues) ref.push_back(d.target_response().words);
        report = to_json(text_metrics(hyp, ref));
    } else {
        if (a.ckpt.empty()) throw UsageError("eval needs --ckpt or --hyp");
        const auto ck = open_checkpoint(a.ckpt);
        const Corpus data = read_for_model(a.data, *ck.model);
        const Evaluation ev = evaluate(*ck.model, data.dialogues, {a.max_len, a.top_k}, a.seed);
        report = to_json(ev.report);
        std::cerr << "intent_first accuracy " << ev.acc_intent_first << "  tag F1 " << ev.tag_f1 << '\n';
    }
    open_out(a.out) << report.dump(2) << '\n';
    std::cout << report.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------- annotate

struct AnnotateArgs {
    std::string ckpt, data, out;
};

int cmd_annotate(const AnnotateArgs& a) {
    const auto ck = open_checkpoint(a.ckpt);
    Corpus data = read_for_model(a.data, *ck.model);
    const bool has_gold = std::any_of(data.dialogues.begin(), data.dialogues.end(), [](const Dialogue& d) {
        for (const auto& t : d.turns)
            for (auto tag : t.reason_tags)
                if (tag == ReasonTag::em) return true;
        return false;
    });
    const double f1 = has_gold ? annotation_f1(*ck.model, data.dialogues) : 0.0;
    for (Dialogue& d : data.dialogues) {
        const auto ann = ck.model->era().annotate(d);
        for (std::size_t k = 0; k < d.turns.size(); ++k) d.turns[k].reason_tags = ann.turn_tags[k];
    }
    save_corpus(a.out, data.dialogues);
    std::cout << "annotated " << data.dialogues.size() << " dialogues\n";
    if (has_gold) std::cout << "tag F1 against input tags " << f1 << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ReflectDiffu: empathetic response generation with emotion contagion and intent-twice diffusion"};
    app.require_subcommand(0, 1);
    bool show_config = false;
    std::string show_from;
    app.add_flag("--show-config", show_config, "Print the effective run configuration (defaults merged with --config) and exit");
    app.add_option("--config", show_from, "Config file for --show-config");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Write a synthetic labelled corpus");
    synth->add_option("--seed", sa.seed, "Generator seed");
    synth->add_option("--n", sa.n, "Number of dialogues")->required();
    synth->add_option("--emotions", sa.emotions, "Emotion classes used");
    synth->add_option("--intents", sa.intents, "Intent classes used");
    synth->add_option("--out", sa.out, "Output JSONL")->required();

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a model and write a checkpoint and CSV log");
    train->add_option("--config", ta.config, "Run configuration JSON");
    train->add_option("--data", ta.data, "Labelled corpus JSONL (default: data.corpus or synthetic)");
    train->add_option("--out", ta.out, "Output directory")->required();
    train->add_flag("--quiet", ta.quiet, "No progress on stderr");

    GenArgs ga;
    auto* gen = app.add_subcommand("generate", "Generate responses with predicted emotion and intents");
    gen->add_option("--ckpt", ga.ckpt, "Checkpoint")->required();
    gen->add_option("--input", ga.input, "Dialogues JSONL")->required();
    gen->add_option("--out", ga.out, "Output JSONL")->required();
    gen->add_option("--top-k", ga.top_k, "Top-k sampling (0 = greedy)");
    gen->add_option("--max-len", ga.max_len, "Maximum response length");
    gen->add_option("--seed", ga.seed, "Sampling seed");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Compute BLEU, distinct-n, perplexity and accuracies");
    ev->add_option("--ckpt", ea.ckpt, "Checkpoint (model mode)");
    ev->add_option("--hyp", ea.hyp, "Hypothesis JSONL with a \"response\" field (model-free mode)");
    ev->add_option("--data", ea.data, "Reference dialogues JSONL")->required();
    ev->add_option("--out", ea.out, "Report JSON")->required();
    ev->add_option("--top-k", ea.top_k, "Top-k sampling (0 = greedy)");
    ev->add_option("--max-len", ea.max_len, "Maximum response length");
    ev->add_option("--seed", ea.seed, "Sampling seed");

    AnnotateArgs aa;
    auto* ann = app.add_subcommand("annotate", "Fill reason tags with the trained annotator");
    ann->add_option("--ckpt", aa.ckpt, "Checkpoint")->required();
    ann->add_option("--data", aa.data, "Dialogues JSONL")->required();
    ann->add_option("--out", aa.out, "Output JSONL")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (show_config) {
            const RunConfig cfg = show_from.empty() ? RunConfig{} : load_run_config(show_from);
            std::cout << to_json(cfg).dump(2) << '\n';
            return 0;
        }
        if (*synth) return cmd_synth(sa);
        if (*train) return cmd_train(ta);
        if (*gen) return cmd_generate(ga);
        if (*ev) return cmd_eval(ea);
        if (*ann) return cmd_annotate(aa);
        std::cerr << app.help();
        return kUsage;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kMismatch;
    } catch (const EraError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kMismatch;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const CorpusError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
}

#include "reflectdiffu/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace rd {

using nlohmann::json;
using nlohmann::ordered_json;

bool DataConfig::operator==(const DataConfig& o) const {
    return corpus == o.corpus && synthetic.seed == o.synthetic.seed && synthetic.n_dialogues == o.synthetic.n_dialogues &&
           synthetic.n_emotions == o.synthetic.n_emotions && synthetic.n_intents == o.synthetic.n_intents &&
           split_seed == o.split_seed && train_frac == o.train_frac && val_frac == o.val_frac &&
           emotion_noise == o.emotion_noise;
}

namespace {

// Reads known keys out of one JSON object and rejects whatever is left.
class Section {
public:
    Section(const json& doc, std::string path) : path_(std::move(path)) {
        if (!doc.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
        doc_ = &doc;
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = doc_->find(key);
        if (it == doc_->end()) return;
        const std::string p = field(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) throw ConfigError(p, "expected a boolean");
            out = it->get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer()) throw ConfigError(p, "expected an integer");
            if (std::is_unsigned_v<T> && it->get<long long>() < 0) throw ConfigError(p, "must be non-negative");
            out = it->get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) throw ConfigError(p, "expected a number");
            out = it->get<T>();
        } else {
            if (!it->is_string()) throw ConfigError(p, "expected a string");
            out = it->get<T>();
        }
    }

    std::optional<Section> sub(const char* key) {
        seen_.insert(key);
        const auto it = doc_->find(key);
        if (it == doc_->end()) return std::nullopt;
        return Section(*it, field(key));
    }

    const json* raw(const char* key) {
        seen_.insert(key);
        const auto it = doc_->find(key);
        return it == doc_->end() ? nullptr : &*it;
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : doc_->items())
            if (!seen_.count(k)) throw ConfigError(field(k), "unknown key");
    }

private:
    const json* doc_;
    std::string path_;
    std::set<std::string> seen_;
};

VarianceForm parse_form(const std::string& s, const std::string& path) {
    if (s == "product") return VarianceForm::product;
    if (s == "sum") return VarianceForm::sum;
    throw ConfigError(path, "expected \"product\" or \"sum\"");
}

const char* form_name(VarianceForm f) { return f == VarianceForm::product ? "product" : "sum"; }

void read_model(Section& s, ModelConfig& m) {
    s.get("d_model", m.d_model);
    s.get("layers", m.layers);
    s.get("heads", m.heads);
    s.get("ff_hidden", m.ff_hidden);
    s.get("max_len", m.max_len);
    s.get("dropout", m.dropout);
    s.get("tau", m.tau);
    s.get("max_response_len", m.max_response_len);
    s.get("seed", m.seed);
}

void read_diffusion(Section& s, ModelConfig& m) {
    s.get("T", m.diffusion_T);
    s.get("beta_start", m.beta_start);
    s.get("beta_end", m.beta_end);
    std::string form = form_name(m.variance_form);
    s.get("variance_form", form);
    m.variance_form = parse_form(form, s.field("variance_form"));
    s.get("state_t", m.diffusion_state_t);
    s.get("denoiser_hidden", m.denoiser_hidden);
    s.get("timestep_dim", m.timestep_dim);
}

void read_intent(Section& s, ModelConfig& m) {
    s.get("alpha", m.intent_alpha);
    s.get("ratio_clip_lo", m.ratio_clip_lo);
    s.get("ratio_clip_hi", m.ratio_clip_hi);
}

ordered_json model_json(const ModelConfig& m) {
    return {{"d_model", m.d_model},  {"layers", m.layers}, {"heads", m.heads},
            {"ff_hidden", m.ff_hidden}, {"max_len", m.max_len}, {"dropout", m.dropout},
            {"tau", m.tau},          {"max_response_len", m.max_response_len}, {"seed", m.seed}};
}

ordered_json diffusion_json(const ModelConfig& m) {
    return {{"T", m.diffusion_T},
            {"beta_start", m.beta_start},
            {"beta_end", m.beta_end},
            {"variance_form", form_name(m.variance_form)},
            {"state_t", m.diffusion_state_t},
            {"denoiser_hidden", m.denoiser_hidden},
            {"timestep_dim", m.timestep_dim}};
}

ordered_json intent_json(const ModelConfig& m) {
    return {{"alpha", m.intent_alpha}, {"ratio_clip_lo", m.ratio_clip_lo}, {"ratio_clip_hi", m.ratio_clip_hi}};
}

void check(bool ok, const std::string& path, const std::string& message) {
    if (!ok) throw ConfigError(path, message);
}

void validate_model(const ModelConfig& m) {
    check(m.d_model > 0, "model.d_model", "must be positive");
    check(m.heads > 0 && m.d_model % m.heads == 0, "model.heads", "must divide d_model");
    check(m.layers > 0, "model.layers", "must be positive");
    check(m.ff_hidden > 0, "model.ff_hidden", "must be positive");
    check(m.max_len >= 2, "model.max_len", "must be at least 2");
    check(m.dropout >= 0.0 && m.dropout < 1.0, "model.dropout", "must lie in [0, 1)");
    check(m.tau > 0.0, "model.tau", "must be positive");
    check(m.max_response_len > 0, "model.max_response_len", "must be positive");
    check(m.diffusion_T > 0, "diffusion.T", "must be positive");
    check(m.beta_start > 0.0 && m.beta_start <= m.beta_end, "diffusion.beta_start", "need 0 < beta_start <= beta_end");
    check(m.beta_end < 1.0, "diffusion.beta_end", "must be below 1");
    check(m.diffusion_state_t >= 1 && m.diffusion_state_t <= m.diffusion_T, "diffusion.state_t", "must lie in [1, T]");
    check(m.denoiser_hidden > 0, "diffusion.denoiser_hidden", "must be positive");
    check(m.timestep_dim > 0 && m.timestep_dim % 2 == 0, "diffusion.timestep_dim", "must be a positive even number");
    if (m.variance_form == VarianceForm::sum) {
        const double sum = 0.5 * (m.beta_start + m.beta_end) * static_cast<double>(m.diffusion_T);
        check(sum < 1.0, "diffusion.variance_form", "sum form needs the betas to sum below 1");
    }
    check(m.intent_alpha >= 0.0, "intent.alpha", "must be non-negative");
    check(m.ratio_clip_lo > 0.0 && m.ratio_clip_lo <= 1.0, "intent.ratio_clip_lo", "must lie in (0, 1]");
    check(m.ratio_clip_hi >= 1.0, "intent.ratio_clip_hi", "must be at least 1");
}

}  // namespace

void validate(const RunConfig& c) {
    const auto& d = c.data;
    check(d.synthetic.n_dialogues > 0, "data.synthetic.n_dialogues", "must be positive");
    check(d.synthetic.n_emotions >= 1 && d.synthetic.n_emotions <= 32, "data.synthetic.n_emotions", "must lie in [1, 32]");
    check(d.synthetic.n_intents >= 1 && d.synthetic.n_intents <= 9, "data.synthetic.n_intents", "must lie in [1, 9]");
    check(d.train_frac > 0.0 && d.train_frac <= 1.0, "data.train_frac", "must lie in (0, 1]");
    check(d.val_frac >= 0.0 && d.train_frac + d.val_frac <= 1.0, "data.val_frac", "train_frac + val_frac must not exceed 1");
    check(d.emotion_noise >= 0.0 && d.emotion_noise <= 1.0, "data.emotion_noise", "must lie in [0, 1]");
    validate_model(c.model);
    const auto& t = c.train;
    check(t.weights.delta >= 0.0, "train.delta", "must be non-negative");
    check(t.weights.zeta >= 0.0, "train.zeta", "must be non-negative");
    check(t.weights.eta >= 0.0, "train.eta", "must be non-negative");
    check(t.batch_size >= 1, "train.batch_size", "must be at least 1");
    check(t.warmup_steps >= 1, "train.warmup_steps", "must be at least 1");
    check(t.lr_decay > 0.0 && t.lr_decay <= 1.0, "train.lr_decay", "must lie in (0, 1]");
    check(t.lr_scale > 0.0, "train.lr_scale", "must be positive");
    check(t.patience >= 1, "train.patience", "must be at least 1");
    check(t.eval_every >= 1, "train.eval_every", "must be at least 1");
    check(t.mu_refresh >= 1, "train.mu_refresh", "must be at least 1");
    check(c.eval.max_len >= 1, "eval.max_len", "must be at least 1");
}

RunConfig parse_run_config(const json& doc) {
    RunConfig c;
    Section root(doc, "");
    if (auto s = root.sub("data")) {
        if (const json* p = s->raw("corpus")) {
            if (!p->is_string()) throw ConfigError("data.corpus", "expected a string");
            c.data.corpus = p->get<std::string>();
        }
        if (auto syn = s->sub("synthetic")) {
            syn->get("seed", c.data.synthetic.seed);
            syn->get("n_dialogues", c.data.synthetic.n_dialogues);
            syn->get("n_emotions", c.data.synthetic.n_emotions);
            syn->get("n_intents", c.data.synthetic.n_intents);
            syn->finish();
        }
        s->get("split_seed", c.data.split_seed);
        s->get("train_frac", c.data.train_frac);
        s->get("val_frac", c.data.val_frac);
        s->get("emotion_noise", c.data.emotion_noise);
        s->finish();
    }
    if (auto s = root.sub("model")) {
        read_model(*s, c.model);
        s->finish();
    }
    if (auto s = root.sub("train")) {
        s->get("delta", c.train.weights.delta);
        s->get("zeta", c.train.weights.zeta);
        s->get("eta", c.train.weights.eta);
        s->get("batch_size", c.train.batch_size);
        s->get("warmup_steps", c.train.warmup_steps);
        s->get("lr_decay", c.train.lr_decay);
        s->get("lr_scale", c.train.lr_scale);
        s->get("max_iters", c.train.max_iters);
        s->get("patience", c.train.patience);
        s->get("eval_every", c.train.eval_every);
        s->get("mu_refresh", c.train.mu_refresh);
        s->get("seed", c.train.seed);
        s->finish();
    }
    if (auto s = root.sub("diffusion")) {
        read_diffusion(*s, c.model);
        s->finish();
    }
    if (auto s = root.sub("intent")) {
        read_intent(*s, c.model);
        s->finish();
    }
    if (auto s = root.sub("eval")) {
        s->get("top_k", c.eval.top_k);
        s->get("max_len", c.eval.max_len);
        s->get("seed", c.eval.seed);
        s->finish();
    }
    root.finish();
    validate(c);
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
    }
    return parse_run_config(doc);
}

ordered_json to_json(const RunConfig& c) {
    ordered_json data;
    if (c.data.corpus) data["corpus"] = *c.data.corpus;
    data["synthetic"] = {{"seed", c.data.synthetic.seed},
                         {"n_dialogues", c.data.synthetic.n_dialogues},
                         {"n_emotions", c.data.synthetic.n_emotions},
                         {"n_intents", c.data.synthetic.n_intents}};
    data["split_seed"] = c.data.split_seed;
    data["train_frac"] = c.data.train_frac;
    data["val_frac"] = c.data.val_frac;
    data["emotion_noise"] = c.data.emotion_noise;
    const auto& t = c.train;
    ordered_json train = {{"delta", t.weights.delta},   {"zeta", t.weights.zeta},   {"eta", t.weights.eta},
                          {"batch_size", t.batch_size}, {"warmup_steps", t.warmup_steps}, {"lr_decay", t.lr_decay},
                          {"lr_scale", t.lr_scale},     {"max_iters", t.max_iters}, {"patience", t.patience},
                          {"eval_every", t.eval_every}, {"mu_refresh", t.mu_refresh}, {"seed", t.seed}};
    ordered_json out;
    out["data"] = std::move(data);
    out["model"] = model_json(c.model);
    out["train"] = std::move(train);
    out["diffusion"] = diffusion_json(c.model);
    out["intent"] = intent_json(c.model);
    out["eval"] = {{"top_k", c.eval.top_k}, {"max_len", c.eval.max_len}, {"seed", c.eval.seed}};
    return out;
}

ordered_json model_config_to_json(const ModelConfig& m) {
    ordered_json out;
    out["vocab_size"] = m.vocab_size;
    out["model"] = model_json(m);
    out["diffusion"] = diffusion_json(m);
    out["intent"] = intent_json(m);
    return out;
}

ModelConfig model_config_from_json(const json& doc) {
    ModelConfig m;
    Section root(doc, "");
    root.get("vocab_size", m.vocab_size);
    if (auto s = root.sub("model")) {
        read_model(*s, m);
        s->finish();
    }
    if (auto s = root.sub("diffusion")) {
        read_diffusion(*s, m);
        s->finish();
    }
    if (auto s = root.sub("intent")) {
        read_intent(*s, m);
        s->finish();
    }
    root.finish();
    validate_model(m);
    return m;
}

void inject_emotion_noise(std::vector<Dialogue>& dialogues, double fraction, const std::vector<Emotion>& pool,
                          std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("inject_emotion_noise: fraction outside [0, 1]");
    if (fraction == 0.0 || dialogues.empty()) return;
    if (pool.size() < 2) throw std::invalid_argument("inject_emotion_noise: need at least two emotions to swap between");
    Rng rng(seed);
    std::vector<std::size_t> order(dialogues.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dialogues.size())));
    for (std::size_t k = 0; k < n; ++k) {
        Dialogue& d = dialogues[order[k]];
        const auto gold = d.emotion();
        if (!gold) continue;
        Emotion repl = *gold;
        while (repl == *gold) repl = pool[rng.below(pool.size())];
        for (std::size_t t = d.target; t-- > 0;)
            if (d.turns[t].speaker == Speaker::user && d.turns[t].emotion) {
                d.turns[t].emotion = repl;
                break;
            }
    }
}

}  // namespace rd

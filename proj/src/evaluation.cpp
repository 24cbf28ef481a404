#include "reflectdiffu/evaluation.hpp"

namespace rd {

double annotation_f1(const ReflectDiffu& model, const std::vector<Dialogue>& data) {
    std::vector<bool> predicted, gold;
    for (const Dialogue& d : data) {
        const auto ann = model.era().annotate(d, false);
        for (std::size_t k = 0; k < d.target; ++k) {
            if (d.turns[k].speaker != Speaker::user) continue;
            for (std::size_t i = 0; i < d.turns[k].reason_tags.size(); ++i) {
                gold.push_back(d.turns[k].reason_tags[i] == ReasonTag::em);
                predicted.push_back(ann.turn_tags[k][i] == ReasonTag::em);
            }
        }
    }
    return binary_f1(predicted, gold);
}

Evaluation evaluate(const ReflectDiffu& model, const std::vector<Dialogue>& data, const GenerateOptions& options,
                    std::uint64_t seed) {
    if (data.empty()) throw MetricError("evaluate: empty data set");
    Evaluation out;
    Rng sampler(seed);
    std::vector<Sentence> hyp, ref;
    std::vector<double> nll;
    std::vector<Emotion> emo_pred, emo_gold;
    std::vector<Intent> first, twice, intent_gold;
    for (const Dialogue& d : data) {
        require_labels(d);
        Prediction p = model.predict(d, options, options.top_k ? &sampler : nullptr);
        hyp.push_back(p.response.words);
        ref.push_back(d.target_response().words);
        const auto token_nll = model.response_nll(d);
        nll.insert(nll.end(), token_nll.begin(), token_nll.end());
        emo_pred.push_back(p.emotion);
        emo_gold.push_back(*d.emotion());
        first.push_back(p.intent_first);
        twice.push_back(p.intent_twice);
        intent_gold.push_back(*d.intent());
        out.predictions.push_back(std::move(p));
    }
    out.report = text_metrics(hyp, ref);
    out.report.ppl = perplexity_from_nll(nll);
    out.report.acc_emo = accuracy<Emotion>(emo_pred, emo_gold);
    out.report.acc_intent = accuracy<Intent>(twice, intent_gold);
    out.acc_intent_first = accuracy<Intent>(first, intent_gold);
    out.tag_f1 = annotation_f1(model, data);
    return out;
}

}  // namespace rd

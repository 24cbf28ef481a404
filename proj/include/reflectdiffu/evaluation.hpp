#pragma once

// Runs a trained model over labelled dialogues and scores it.

#include "reflectdiffu/metrics.hpp"
#include "reflectdiffu/model.hpp"

namespace rd {

struct Evaluation {
    EvalReport report;  // Acc_Intent scores the corrected (second-pass) intent
    std::vector<Prediction> predictions;
    double acc_intent_first = 0.0;
    double tag_f1 = 0.0;  // em-tag F1 over user-turn tokens, annotator vs gold
};

/// Top-k sampling draws from a single Rng seeded with `seed`, in input order.
Evaluation evaluate(const ReflectDiffu& model, const std::vector<Dialogue>& data, const GenerateOptions& options,
                    std::uint64_t seed = 1);

/// Annotator em-tag F1 against the corpus tags of every user turn before the target.
double annotation_f1(const ReflectDiffu& model, const std::vector<Dialogue>& data);

}  // namespace rd

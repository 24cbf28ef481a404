#pragma once

// Run configuration: one JSON document with data / model / train /
// diffusion / intent / eval sections. Unknown keys are errors.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "reflectdiffu/trainer.hpp"

namespace rd {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& path, const std::string& message)
        : std::runtime_error(path + ": " + message), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

struct DataConfig {
    std::optional<std::string> corpus;  // JSONL path; synthetic data when absent
    SyntheticSpec synthetic;
    std::uint64_t split_seed = 1;
    double train_frac = 0.8;
    double val_frac = 0.1;
    double emotion_noise = 0.0;  // fraction of training emotion labels replaced at random
    bool operator==(const DataConfig& o) const;
};

struct EvalConfig {
    std::size_t top_k = 0;  // 0 = greedy
    std::size_t max_len = 30;
    std::uint64_t seed = 1;
    bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    bool operator==(const RunConfig&) const = default;
};

/// Applies `doc` over the defaults and validates. Errors carry the dotted field path.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& cfg);

/// Range checks shared by the parser and programmatic callers.
void validate(const RunConfig& cfg);

/// The model-shaping subset (model, diffusion, intent sections plus vocab size).
nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Replaces `fraction` of the emotion labels (user turns) with a different random emotion.
void inject_emotion_noise(std::vector<Dialogue>& dialogues, double fraction, const std::vector<Emotion>& pool,
                          std::uint64_t seed);

}  // namespace rd

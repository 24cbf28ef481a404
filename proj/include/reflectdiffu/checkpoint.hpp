#pragma once

// Binary checkpoints: magic "RFD1", little-endian, length-prefixed records
// of config, vocabulary, named tensors and optimizer state.

#include <filesystem>
#include <memory>
#include <stdexcept>

#include "reflectdiffu/config.hpp"

namespace rd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrc {
    io = 1,
    bad_magic,
    version_mismatch,
    truncated,
    hash_mismatch,    // stored config hash does not match the stored config
    config_mismatch,  // strict load against a different expected config
    parameter_mismatch,
    vocab_mismatch,
};

class CheckpointError : public std::runtime_error {
public:
    CheckpointError(CheckpointErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    CheckpointErrc code() const { return code_; }

private:
    CheckpointErrc code_;
};

/// FNV-1a over the canonical config JSON.
std::uint64_t config_hash(const ModelConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const ReflectDiffu& model, const Adam* optimizer = nullptr);

struct LoadedCheckpoint {
    std::unique_ptr<ReflectDiffu> model;
    std::uint64_t config_hash = 0;
    bool has_optimizer = false;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first_moments, second_moments;

    /// Copies the stored moments and step into `opt` (built over model->parameters().trainable()).
    void restore_optimizer(Adam& opt) const;
};

/// `expected`, when given, must hash equal to the stored config (strict mode).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace rd

#pragma once

#include <cstdint>
#include <vector>

#include "reflectdiffu/gradcheck.hpp"

namespace rd {

/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5). Throws for step == 0.
double noam_lr(std::uint64_t step, std::size_t d_model, std::uint64_t warmup);

/// Noam schedule with a post-warmup floor at `decay` times the peak rate.
double scheduled_lr(std::uint64_t step, std::size_t d_model, std::uint64_t warmup, double decay);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double clip_norm = 1.0;  // global gradient norm clip; <= 0 disables
};

/// Adam over a fixed parameter list; moments are stored in parameter order.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<NamedTensor> params, AdamOptions options = {});

    /// Applies one update with learning rate `lr`. Returns the pre-clip gradient norm.
    double step(double lr);

    std::uint64_t steps() const { return t_; }
    const std::vector<NamedTensor>& params() const { return params_; }
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void set_steps(std::uint64_t t) { t_ = t; }

private:
    std::vector<NamedTensor> params_;
    AdamOptions options_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace rd

#pragma once

// Gaussian diffusion over the contagion state Q and the intent-conditioned
// noise predictor used to reverse it.

#include <functional>
#include <vector>

#include "reflectdiffu/layers.hpp"

namespace rd {

enum class VarianceForm { product, sum };

class NoiseSchedule {
public:
    NoiseSchedule() = default;
    /// Linear betas from beta_start to beta_end over T steps.
    NoiseSchedule(std::size_t T, double beta_start, double beta_end, VarianceForm form = VarianceForm::product);
    /// Arbitrary betas, betas[0] is beta_1.
    static NoiseSchedule from_betas(std::vector<double> betas, VarianceForm form = VarianceForm::product);

    std::size_t T() const { return betas_.size(); }
    double beta(std::size_t t) const;       // 1 <= t <= T
    double alpha_bar(std::size_t t) const;  // prod_{s<=t}(1 - beta_s); alpha_bar(0) == 1
    /// Divisor of the predicted noise in the reverse step:
    /// sqrt(1 - alpha_bar_t), or sqrt(1 - sum_{s<=t} beta_s) in sum form.
    double noise_scale(std::size_t t) const;
    VarianceForm form() const { return form_; }

private:
    void finish();
    std::vector<double> betas_, alpha_bar_, beta_sum_;
    VarianceForm form_ = VarianceForm::product;
};

/// Iterative corruption q_t = sqrt(1 - b_t) q_{t-1} + sqrt(b_t) eps_t.
std::vector<double> forward_diffuse_iterative(std::span<const double> q0, std::size_t t, const NoiseSchedule& s,
                                              Rng& rng);

struct DiffusedSample {
    Tensor q_t;
    Tensor noise;  // the eps of the closed-form jump
    std::size_t t = 0;
};

/// Closed-form jump q_t = sqrt(abar_t) q0 + sqrt(1 - abar_t) eps, differentiable in q0.
DiffusedSample forward_diffuse(const Tensor& q0, std::size_t t, const NoiseSchedule& s, Rng& rng);

/// Sinusoidal embedding of a timestep.
Tensor timestep_embedding(std::size_t t, std::size_t dim);

using NoisePredictor = std::function<Tensor(const Tensor& q_t, std::size_t t, const Tensor& cond)>;

/// Conditional MLP noise predictor: [q_t; emb(t); cond] -> hidden -> hidden -> d.
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(ParameterSet& ps, const std::string& prefix, std::size_t d_model, std::size_t cond_dim, Rng& rng,
             std::size_t hidden = 128, std::size_t t_dim = 16);

    Tensor operator()(const Tensor& q_t, std::size_t t, const Tensor& cond) const;
    NoisePredictor predictor() const;

private:
    Linear l1_, l2_, l3_;
    std::size_t t_dim_ = 16;
};

/// q~_{t-1} = (q_t - b_t eps^ / noise_scale(t)) / sqrt(1 - b_t).
Tensor denoise_step(const Tensor& q_t, std::size_t t, const Tensor& cond, const NoisePredictor& model,
                    const NoiseSchedule& s);

/// Runs denoise_step from t down to 1.
Tensor reverse_chain(const Tensor& q_t, std::size_t t, const Tensor& cond, const NoisePredictor& model,
                     const NoiseSchedule& s);

/// mean over samples of ||eps - M(q_t, t, cond)||^2 with t uniform in [1, T].
/// Zero (and graph-free) for an empty batch.
Tensor denoiser_loss(const NoisePredictor& model, const std::vector<Tensor>& q0s, const std::vector<Tensor>& conds,
                     const NoiseSchedule& s, Rng& rng);

}  // namespace rd

#include "reflectdiffu/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rd {

NoiseSchedule::NoiseSchedule(std::size_t T, double beta_start, double beta_end, VarianceForm form) : form_(form) {
    if (T == 0) throw std::invalid_argument("NoiseSchedule: T must be positive");
    if (!(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("NoiseSchedule: need 0 <= beta_start <= beta_end < 1");
    betas_.resize(T);
    for (std::size_t i = 0; i < T; ++i)
        betas_[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (T - 1.0);
    finish();
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, VarianceForm form) {
    if (betas.empty()) throw std::invalid_argument("NoiseSchedule: empty beta list");
    NoiseSchedule s;
    for (double b : betas)
        if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("NoiseSchedule: beta outside [0, 1)");
    s.betas_ = std::move(betas);
    s.form_ = form;
    s.finish();
    return s;
}

void NoiseSchedule::finish() {
    alpha_bar_.assign(betas_.size() + 1, 1.0);
    beta_sum_.assign(betas_.size() + 1, 0.0);
    for (std::size_t t = 1; t <= betas_.size(); ++t) {
        alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - betas_[t - 1]);
        beta_sum_[t] = beta_sum_[t - 1] + betas_[t - 1];
    }
    if (form_ == VarianceForm::sum && beta_sum_.back() >= 1.0)
        throw std::invalid_argument("NoiseSchedule: sum variance form needs sum(beta) < 1, got " +
                                    std::to_string(beta_sum_.back()));
}

double NoiseSchedule::beta(std::size_t t) const {
    if (t == 0 || t > betas_.size()) throw std::out_of_range("NoiseSchedule: t out of range");
    return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
    if (t > betas_.size()) throw std::out_of_range("NoiseSchedule: t out of range");
    return alpha_bar_[t];
}

double NoiseSchedule::noise_scale(std::size_t t) const {
    if (t == 0 || t > betas_.size()) throw std::out_of_range("NoiseSchedule: t out of range");
    return std::sqrt(form_ == VarianceForm::product ? 1.0 - alpha_bar_[t] : 1.0 - beta_sum_[t]);
}

std::vector<double> forward_diffuse_iterative(std::span<const double> q0, std::size_t t, const NoiseSchedule& s,
                                              Rng& rng) {
    if (t == 0 || t > s.T()) throw std::out_of_range("forward_diffuse: t must be in [1, T]");
    std::vector<double> q(q0.begin(), q0.end());
    for (std::size_t step = 1; step <= t; ++step) {
        const double b = s.beta(step);
        const double keep = std::sqrt(1.0 - b), add = std::sqrt(b);
        for (double& x : q) x = keep * x + add * rng.normal();
    }
    return q;
}

DiffusedSample forward_diffuse(const Tensor& q0, std::size_t t, const NoiseSchedule& s, Rng& rng) {
    if (t == 0 || t > s.T()) throw std::out_of_range("forward_diffuse: t must be in [1, T]");
    std::vector<double> eps(q0.size());
    for (double& e : eps) e = rng.normal();
    const Tensor noise = Tensor::from(q0.shape(), std::move(eps));
    const double ab = s.alpha_bar(t);
    return {add(scale(q0, std::sqrt(ab)), scale(noise, std::sqrt(1.0 - ab))), noise, t};
}

Tensor timestep_embedding(std::size_t t, std::size_t dim) {
    std::vector<double> v(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / std::max<std::size_t>(1, half));
        v[i] = std::sin(static_cast<double>(t) * freq);
        v[half + i] = std::cos(static_cast<double>(t) * freq);
    }
    return Tensor::vector(std::move(v));
}

Denoiser::Denoiser(ParameterSet& ps, const std::string& prefix, std::size_t d_model, std::size_t cond_dim, Rng& rng,
                   std::size_t hidden, std::size_t t_dim)
    : t_dim_(t_dim) {
    l1_ = Linear(ps, prefix + ".l1", d_model + t_dim + cond_dim, hidden, rng);
    l2_ = Linear(ps, prefix + ".l2", hidden, hidden, rng);
    l3_ = Linear(ps, prefix + ".l3", hidden, d_model, rng);
}

Tensor Denoiser::operator()(const Tensor& q_t, std::size_t t, const Tensor& cond) const {
    const Tensor x = concat_cols({q_t, timestep_embedding(t, t_dim_), cond});
    return l3_(silu(l2_(silu(l1_(x)))));
}

NoisePredictor Denoiser::predictor() const {
    return [this](const Tensor& q, std::size_t t, const Tensor& c) { return (*this)(q, t, c); };
}

Tensor denoise_step(const Tensor& q_t, std::size_t t, const Tensor& cond, const NoisePredictor& model,
                    const NoiseSchedule& s) {
    if (t == 0 || t > s.T()) throw std::out_of_range("denoise_step: t must be in [1, T]");
    const double b = s.beta(t);
    const Tensor eps_hat = model(q_t, t, cond);
    if (eps_hat.shape() != q_t.shape()) throw TensorError("denoise_step: predicted noise shape mismatch");
    // A zero beta leaves nothing to remove (and a zero noise scale at t = 1).
    const double coef = b == 0.0 ? 0.0 : b / s.noise_scale(t);
    return scale(sub(q_t, scale(eps_hat, coef)), 1.0 / std::sqrt(1.0 - b));
}

Tensor reverse_chain(const Tensor& q_t, std::size_t t, const Tensor& cond, const NoisePredictor& model,
                     const NoiseSchedule& s) {
    Tensor q = q_t;
    for (std::size_t step = t; step >= 1; --step) q = denoise_step(q, step, cond, model, s);
    return q;
}

Tensor denoiser_loss(const NoisePredictor& model, const std::vector<Tensor>& q0s, const std::vector<Tensor>& conds,
                     const NoiseSchedule& s, Rng& rng) {
    if (q0s.size() != conds.size()) throw std::invalid_argument("denoiser_loss: condition count mismatch");
    if (q0s.empty()) return Tensor::scalar(0.0);
    std::vector<Tensor> terms;
    terms.reserve(q0s.size());
    for (std::size_t i = 0; i < q0s.size(); ++i) {
        const std::size_t t = 1 + rng.below(s.T());
        const auto sample = forward_diffuse(q0s[i], t, s, rng);
        const Tensor diff = sub(sample.noise, model(sample.q_t, t, conds[i]));
        terms.push_back(dot(diff, diff));
    }
    return mean(concat_rows(terms));
}

}  // namespace rd

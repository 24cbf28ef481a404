#include "reflectdiffu/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rd {

double noam_lr(std::uint64_t step, std::size_t d_model, std::uint64_t warmup) {
    if (step == 0) throw std::invalid_argument("noam_lr: step must be >= 1");
    if (warmup == 0) throw std::invalid_argument("noam_lr: warmup must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

double scheduled_lr(std::uint64_t step, std::size_t d_model, std::uint64_t warmup, double decay) {
    const double lr = noam_lr(step, d_model, warmup);
    if (step <= warmup) return lr;
    return std::max(lr, decay * noam_lr(warmup, d_model, warmup));
}

Adam::Adam(std::vector<NamedTensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.size(), 0.0);
        v_.emplace_back(p.tensor.size(), 0.0);
    }
}

double Adam::step(double lr) {
    double sq = 0.0;
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (options_.clip_norm > 0.0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        // A parameter the loss never reached has a zero gradient, not a
        // skipped update, so resumed and uninterrupted runs agree.
        Tensor t = params_[i].tensor;
        const bool has = t.has_grad();
        const std::span<const double> g = has ? t.grad() : std::span<const double>();
        auto w = t.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = has ? g[j] * clip : 0.0;
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
            w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
        }
    }
    return norm;
}

}  // namespace rd

#include "reflectdiffu/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rd {

namespace {

constexpr std::size_t K = kNumTags;

double lse(std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

void check_shapes(const Tensor& e, const Tensor& a) {
    if (e.rank() != 2 || e.cols() != K || e.rows() == 0)
        throw TensorError("crf: emissions must be [L x 2] with L >= 1, got " + shape_string(e.shape()));
    if (a.rank() != 2 || a.rows() != kCrfStates || a.cols() != kCrfStates)
        throw TensorError("crf: transitions must be [4 x 4]");
}

void check_tags(std::span<const ReasonTag> tags, std::size_t len) {
    if (tags.size() != len) throw TensorError("crf: tag count does not match sequence length");
    for (ReasonTag t : tags)
        if (index(t) >= K) throw TensorError("crf: tag outside {em, noem}");
}

struct Lattice {
    std::size_t L = 0;
    std::vector<double> alpha, beta;  // [L x K]
    double log_z = 0.0;
};

Lattice forward_backward(std::span<const double> E, std::span<const double> A, std::size_t L, bool want_beta) {
    auto a = [&](std::size_t i, std::size_t j) { return A[i * kCrfStates + j]; };
    Lattice lat;
    lat.L = L;
    lat.alpha.assign(L * K, 0.0);
    for (std::size_t j = 0; j < K; ++j) lat.alpha[j] = a(kCrfStart, j) + E[j];
    double buf[K];
    for (std::size_t t = 1; t < L; ++t)
        for (std::size_t j = 0; j < K; ++j) {
            for (std::size_t i = 0; i < K; ++i) buf[i] = lat.alpha[(t - 1) * K + i] + a(i, j);
            lat.alpha[t * K + j] = lse(buf) + E[t * K + j];
        }
    for (std::size_t j = 0; j < K; ++j) buf[j] = lat.alpha[(L - 1) * K + j] + a(j, kCrfStop);
    lat.log_z = lse(buf);
    if (!want_beta) return lat;
    lat.beta.assign(L * K, 0.0);
    for (std::size_t i = 0; i < K; ++i) lat.beta[(L - 1) * K + i] = a(i, kCrfStop);
    for (std::size_t t = L - 1; t-- > 0;)
        for (std::size_t i = 0; i < K; ++i) {
            for (std::size_t j = 0; j < K; ++j) buf[j] = a(i, j) + E[(t + 1) * K + j] + lat.beta[(t + 1) * K + j];
            lat.beta[t * K + i] = lse(buf);
        }
    return lat;
}

double path_score(std::span<const double> E, std::span<const double> A, std::span<const ReasonTag> tags) {
    auto a = [&](std::size_t i, std::size_t j) { return A[i * kCrfStates + j]; };
    double s = a(kCrfStart, index(tags[0]));
    for (std::size_t t = 0; t < tags.size(); ++t) {
        s += E[t * K + index(tags[t])];
        if (t > 0) s += a(index(tags[t - 1]), index(tags[t]));
    }
    return s + a(index(tags.back()), kCrfStop);
}

}  // namespace

double crf_path_score(const Tensor& emissions, const Tensor& transitions, std::span<const ReasonTag> tags) {
    check_shapes(emissions, transitions);
    check_tags(tags, emissions.rows());
    return path_score(emissions.data(), transitions.data(), tags);
}

double crf_log_partition(const Tensor& emissions, const Tensor& transitions) {
    check_shapes(emissions, transitions);
    return forward_backward(emissions.data(), transitions.data(), emissions.rows(), false).log_z;
}

Tensor crf_neg_log_likelihood(const Tensor& emissions, const Tensor& transitions, std::span<const ReasonTag> tags) {
    check_shapes(emissions, transitions);
    check_tags(tags, emissions.rows());
    const std::size_t L = emissions.rows();
    const bool need_grad = grad_enabled() && (emissions.requires_grad() || transitions.requires_grad());
    auto lat = std::make_shared<Lattice>(forward_backward(emissions.data(), transitions.data(), L, need_grad));
    const double nll = lat->log_z - path_score(emissions.data(), transitions.data(), tags);

    std::vector<ReasonTag> gold(tags.begin(), tags.end());
    std::vector<double> E(emissions.data().begin(), emissions.data().end());
    std::vector<double> A(transitions.data().begin(), transitions.data().end());
    return custom_op({emissions, transitions}, {1}, {nll},
                     [lat, gold = std::move(gold), E = std::move(E), A = std::move(A), L](
                         std::span<const double> g_out, std::vector<std::span<double>>& grads) {
                         const double g = g_out[0];
                         const double log_z = lat->log_z;
                         auto a = [&](std::size_t i, std::size_t j) { return A[i * kCrfStates + j]; };
                         auto& gE = grads[0];
                         auto& gA = grads[1];
                         auto marg = [&](std::size_t t, std::size_t j) {
                             return std::exp(lat->alpha[t * K + j] + lat->beta[t * K + j] - log_z);
                         };
                         if (!gE.empty()) {
                             for (std::size_t t = 0; t < L; ++t)
                                 for (std::size_t j = 0; j < K; ++j) gE[t * K + j] += g * marg(t, j);
                             for (std::size_t t = 0; t < L; ++t) gE[t * K + index(gold[t])] -= g;
                         }
                         if (!gA.empty()) {
                             for (std::size_t j = 0; j < K; ++j) {
                                 gA[kCrfStart * kCrfStates + j] += g * marg(0, j);
                                 gA[j * kCrfStates + kCrfStop] += g * marg(L - 1, j);
                             }
                             for (std::size_t t = 1; t < L; ++t)
                                 for (std::size_t i = 0; i < K; ++i)
                                     for (std::size_t j = 0; j < K; ++j)
                                         gA[i * kCrfStates + j] +=
                                             g * std::exp(lat->alpha[(t - 1) * K + i] + a(i, j) + E[t * K + j] +
                                                          lat->beta[t * K + j] - log_z);
                             gA[kCrfStart * kCrfStates + index(gold.front())] -= g;
                             gA[index(gold.back()) * kCrfStates + kCrfStop] -= g;
                             for (std::size_t t = 1; t < L; ++t)
                                 gA[index(gold[t - 1]) * kCrfStates + index(gold[t])] -= g;
                         }
                     });
}

std::vector<ReasonTag> viterbi_decode(const Tensor& emissions, const Tensor& transitions) {
    check_shapes(emissions, transitions);
    const std::size_t L = emissions.rows();
    const auto E = emissions.data();
    const auto A = transitions.data();
    auto a = [&](std::size_t i, std::size_t j) { return A[i * kCrfStates + j]; };
    std::vector<double> score(L * K);
    std::vector<std::size_t> back(L * K, 0);
    for (std::size_t j = 0; j < K; ++j) score[j] = a(kCrfStart, j) + E[j];
    for (std::size_t t = 1; t < L; ++t)
        for (std::size_t j = 0; j < K; ++j) {
            // Strict comparison keeps the lowest tag index (noem) on ties.
            std::size_t best = 0;
            double best_v = score[(t - 1) * K] + a(0, j);
            for (std::size_t i = 1; i < K; ++i) {
                const double v = score[(t - 1) * K + i] + a(i, j);
                if (v > best_v) best_v = v, best = i;
            }
            score[t * K + j] = best_v + E[t * K + j];
            back[t * K + j] = best;
        }
    std::size_t last = 0;
    double best_v = score[(L - 1) * K] + a(0, kCrfStop);
    for (std::size_t j = 1; j < K; ++j) {
        const double v = score[(L - 1) * K + j] + a(j, kCrfStop);
        if (v > best_v) best_v = v, last = j;
    }
    std::vector<ReasonTag> path(L);
    path[L - 1] = static_cast<ReasonTag>(last);
    for (std::size_t t = L - 1; t > 0; --t) {
        last = back[t * K + last];
        path[t - 1] = static_cast<ReasonTag>(last);
    }
    return path;
}

}  // namespace rd

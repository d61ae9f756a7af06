#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "facrec/rng.hpp"

namespace facrec {

// Temperature softmax, exp((x - max)/gamma) / sum. Accumulates the
// normalizer in 64-bit regardless of S.
template <typename S>
std::vector<S> softmax_temp(std::span<const S> logits, S gamma) {
    if (!(gamma > S(0))) throw std::domain_error("softmax_temp: gamma must be > 0");
    if (logits.empty()) throw std::invalid_argument("softmax_temp: empty logits");
    S mx = logits[0];
    for (S x : logits)
        if (x > mx) mx = x;
    std::vector<S> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - mx) / gamma);
        sum += static_cast<double>(out[i]);
    }
    const S inv = static_cast<S>(1.0 / sum);
    for (S& x : out) x *= inv;
    return out;
}

inline std::vector<float> softmax_temp(std::span<const float> logits, float gamma) {
    return softmax_temp<float>(logits, gamma);
}

// cos(a, b); returns 0 when either norm is below 1e-12 so degenerate
// embeddings read as unaffiliated instead of NaN.
template <typename S>
S cosine(std::span<const S> a, std::span<const S> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) return S(0);
    return static_cast<S>(dot / (na * nb));
}

inline float cosine(std::span<const float> a, std::span<const float> b) {
    return cosine<float>(a, b);
}

// KL(N(mu, diag(sigma^2)) || N(0, I)) = sum 0.5 (mu^2 + sigma^2 - 1 - 2 ln sigma).
template <typename S>
S gaussian_kl(std::span<const S> mu, std::span<const S> sigma) {
    if (mu.size() != sigma.size()) throw std::invalid_argument("gaussian_kl: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < mu.size(); ++i) {
        const double s = static_cast<double>(sigma[i]);
        if (!(s > 0.0)) throw std::domain_error("gaussian_kl: sigma must be > 0");
        const double m = static_cast<double>(mu[i]);
        acc += 0.5 * (m * m + s * s - 1.0 - 2.0 * std::log(s));
    }
    return static_cast<S>(acc < 0.0 ? 0.0 : acc);
}

inline float gaussian_kl(std::span<const float> mu, std::span<const float> sigma) {
    return gaussian_kl<float>(mu, sigma);
}

// mu + sigma * eps, eps ~ N(0, I) from rng.
std::vector<float> reparam_sample(std::span<const float> mu, std::span<const float> sigma,
                                  SeededRng& rng);

struct AdamState {
    std::vector<float> first_moment;
    std::vector<float> second_moment;
    int64_t step_count = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    explicit AdamState(size_t n = 0) : first_moment(n, 0.0f), second_moment(n, 0.0f) {}
};

// Bias-corrected Adam update, in place.
void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, float lr);

// Central finite differences against analytic gradients. Checks at most
// max_coords coordinates (uniform sample, seeded) and returns the max
// relative error |a - fd| / max(|a|, |fd|, 1e-8). loss_fn must be
// deterministic; params are perturbed in place and restored.
double grad_check(const std::function<double(std::span<const float>)>& loss_fn,
                  std::span<float> params, std::span<const double> analytic, double h,
                  size_t max_coords = SIZE_MAX, uint64_t seed = 0);

}  // namespace facrec

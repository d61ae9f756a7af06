#include "facrec/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace facrec {

std::vector<float> reparam_sample(std::span<const float> mu, std::span<const float> sigma,
                                  SeededRng& rng) {
    if (mu.size() != sigma.size()) throw std::invalid_argument("reparam_sample: length mismatch");
    std::vector<float> out(mu.size());
    for (size_t i = 0; i < mu.size(); ++i) {
        if (!(sigma[i] > 0.0f)) throw std::domain_error("reparam_sample: sigma must be > 0");
        out[i] = mu[i] + sigma[i] * static_cast<float>(rng.normal());
    }
    return out;
}

void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state, float lr) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    if (!(lr > 0.0f)) throw std::domain_error("adam_step: lr must be > 0");
    state.step_count += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    float* m = state.first_moment.data();
    float* v = state.second_moment.data();
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
        v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        params[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
}

double grad_check(const std::function<double(std::span<const float>)>& loss_fn,
                  std::span<float> params, std::span<const double> analytic, double h,
                  size_t max_coords, uint64_t seed) {
    if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: shape mismatch");
    std::vector<size_t> coords;
    if (params.size() <= max_coords) {
        coords.resize(params.size());
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
        SeededRng rng(seed);
        coords.reserve(max_coords);
        for (size_t i = 0; i < max_coords; ++i)
            coords.push_back(static_cast<size_t>(rng.uniform_int(params.size())));
        std::sort(coords.begin(), coords.end());
        coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    double max_rel = 0.0;
    for (size_t i : coords) {
        const float orig = params[i];
        const float xp = static_cast<float>(orig + h);
        const float xm = static_cast<float>(orig - h);
        // actual step after float rounding
        const double step = static_cast<double>(xp) - static_cast<double>(xm);
        params[i] = xp;
        const double fp = loss_fn(params);
        params[i] = xm;
        const double fm = loss_fn(params);
        params[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("grad_check: non-finite loss");
        const double fd = (fp - fm) / step;
        const double a = analytic[i];
        const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-8});
        if (rel > max_rel) max_rel = rel;
    }
    return max_rel;
}

}  // namespace facrec

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "facrec/graph.hpp"
#include "facrec/params.hpp"
#include "facrec/rng.hpp"
#include "facrec/train_config.hpp"

namespace facrec {

struct LossBreakdown {
    double negative_log_likelihood = 0.0;
    double kl = 0.0;
    double l2 = 0.0;  // raw squared parameter norm, weighted into total
    double total = 0.0;
};

// Noise protocol shared by the batch kernel and the serial reference: one
// stream per (key, user) for reparameterization draws, a sibling stream
// for negative sampling.
inline SeededRng user_noise_rng(uint64_t noise_key, int user) {
    return SeededRng(mix_seed(noise_key, static_cast<uint64_t>(user))).fork(0);
}
inline SeededRng user_negative_rng(uint64_t noise_key, int user) {
    return SeededRng(mix_seed(noise_key, static_cast<uint64_t>(user))).fork(1);
}

// Batch ELBO loss and (optionally) its gradient with respect to the flat
// parameter vector. Work fans out over a fixed number of user chunks
// (cfg.grad_chunks) with per-chunk accumulation buffers reduced in chunk
// order, so results are bit-identical for a given config regardless of
// thread count. The double instantiation exists for finite-difference
// verification.
template <typename S>
LossBreakdown elbo_batch_grad(const HeteroGraph& graph, const ModelParams& params,
                              const TrainConfig& cfg, std::span<const int> users,
                              uint64_t noise_key, std::vector<S>* grad_out);

extern template LossBreakdown elbo_batch_grad<float>(const HeteroGraph&, const ModelParams&,
                                                     const TrainConfig&, std::span<const int>,
                                                     uint64_t, std::vector<float>*);
extern template LossBreakdown elbo_batch_grad<double>(const HeteroGraph&, const ModelParams&,
                                                      const TrainConfig&, std::span<const int>,
                                                      uint64_t, std::vector<double>*);

// Forward-only convenience wrapper.
LossBreakdown elbo_loss(const HeteroGraph& graph, const ModelParams& params,
                        const TrainConfig& cfg, std::span<const int> users, uint64_t noise_key);

}  // namespace facrec

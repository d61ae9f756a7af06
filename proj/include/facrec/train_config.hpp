#pragma once

#include <cstdint>
#include <stdexcept>

#include "facrec/params.hpp"

namespace facrec {

struct TrainConfig {
    FactorConfig fc;

    float lr = 2e-4f;
    float l2_weight = 1e-8f;
    int batch_size = 128;
    int epochs = 100;
    uint64_t seed = 0;
    int mc_samples = 1;
    bool decoder_tied = false;
    // 0 = full softmax over all items; > 0 = per-user uniform negative
    // sampling with that many negatives
    int softmax_samples = 0;
    bool exclude_target_from_neighborhood = false;
    float init_scale = 0.1f;
    // fixed number of gradient accumulation blocks per batch; bit-exact
    // reproducibility holds for a given value regardless of thread count
    int grad_chunks = 8;
    int threads = 0;  // 0 = runtime default

    void validate() const {
        fc.validate();
        if (!(lr > 0.0f)) throw std::invalid_argument("train config: lr must be > 0");
        if (l2_weight < 0.0f) throw std::invalid_argument("train config: l2_weight must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
        if (mc_samples < 1) throw std::invalid_argument("train config: mc_samples must be >= 1");
        if (softmax_samples < 0) throw std::invalid_argument("train config: softmax_samples must be >= 0");
        if (init_scale < 0.0f) throw std::invalid_argument("train config: init_scale must be >= 0");
        if (grad_chunks < 1) throw std::invalid_argument("train config: grad_chunks must be >= 1");
        if (threads < 0) throw std::invalid_argument("train config: threads must be >= 0");
    }
};

}  // namespace facrec

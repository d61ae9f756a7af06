#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "facrec/elbo.hpp"
#include "facrec/eval.hpp"
#include "facrec/graph.hpp"
#include "facrec/params.hpp"
#include "facrec/train_config.hpp"

namespace facrec::ref {

// Serial reference implementations built from the public per-node
// operations, kept for testing the batch kernels and for the benchmark.
// No caching, no chunked accumulation, no OpenMP.

LossBreakdown elbo_loss_serial(const HeteroGraph& graph, const ModelParams& params,
                               const TrainConfig& cfg, std::span<const int> users,
                               uint64_t noise_key);

std::vector<int> rank_items_serial(int u, const ModelParams& params, const HeteroGraph& graph);

MetricsReport evaluate_serial(const ModelParams& params, const HeteroGraph& graph,
                              const DatasetSplit& split, EvalGroup group,
                              const std::vector<int>& k_list);

}  // namespace facrec::ref

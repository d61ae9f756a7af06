#pragma once

#include <iosfwd>
#include <vector>

#include "facrec/elbo.hpp"
#include "facrec/graph.hpp"
#include "facrec/io.hpp"
#include "facrec/numerics.hpp"
#include "facrec/params.hpp"
#include "facrec/train_config.hpp"

namespace facrec {

struct EpochLog {
    int epoch = 0;
    LossBreakdown train_loss;  // mean over batches, weighted by batch size
    double val_ndcg100 = 0.0;
};

struct TrainResult {
    ModelCheckpoint checkpoint;  // parameters at the best-validation epoch
    std::vector<EpochLog> log;
};

// Seeded epoch/batch Adam optimization of the ELBO over all users with
// training interactions; model selection by validation NDCG@100. The whole
// run is a deterministic function of (graph, split, config).
TrainResult train(const HeteroGraph& train_graph, const DatasetSplit& split,
                  const TrainConfig& cfg, uint64_t idmap_digest, std::ostream* log_stream = nullptr);

}  // namespace facrec

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facrec/encoder.hpp"
#include "facrec/eval.hpp"
#include "facrec/graph.hpp"
#include "facrec/params.hpp"

namespace facrec {

struct ImportanceScores {
    std::vector<double> per_factor;
    double total = 0.0;
};

// Importance of historical item j for the prediction (u, t): the decoder
// item term per factor, scaled by p(j, c)/|N_u| along the propagation path.
// Zero when j is not a neighbor of u. Uses the mean-mode representation.
ImportanceScores item_importance(int j, int u, int t, const ModelParams& params,
                                 const HeteroGraph& graph, const ItemCache& cache);

// Importance of entity j: the decoder entity term per factor times the
// summed path weight over the user's historical items linking to j.
ImportanceScores entity_importance(int j, int u, int t, const ModelParams& params,
                                   const HeteroGraph& graph, const ItemCache& cache);

struct Contribution {
    int node = 0;
    NodeKind kind = NodeKind::Item;
    std::vector<double> per_factor;
    double total = 0.0;
    int dominant_factor = 0;  // argmax of per_factor
};

struct Explanation {
    int user = 0;
    int target = 0;
    int target_factor = 0;  // argmax p(t, .)
    std::vector<Contribution> items;     // sorted by descending total
    std::vector<Contribution> entities;  // sorted by descending total
};

Explanation explain(int u, int t, const ModelParams& params, const HeteroGraph& graph, int top_m,
                    const ItemCache* cache = nullptr);

std::string explanation_to_json(const Explanation& ex, const IdMap* ids = nullptr);
std::string explanation_to_dot(const Explanation& ex, const IdMap* ids = nullptr);

enum class RemovalStrategy { Model, Random };
enum class RemovalKind { Items, Entities, Both };

struct ShiftRow {
    RemovalStrategy strategy;
    RemovalKind kind;
    int n_remove = 0;
    int run = 0;
    double recall = 0.0;        // Recall@10 before removal, mean over users
    double recall_prime = 0.0;  // after removal
    double shift = 0.0;         // mean per-user (recall - recall')/recall
    int users_evaluated = 0;
    int users_excluded = 0;  // recall == 0 before removal
};

struct ShiftReport {
    std::vector<ShiftRow> rows;
    std::string to_tsv() const;
    // mean shift over runs for one (strategy, kind, n) cell
    double mean_shift(RemovalStrategy s, RemovalKind k, int n) const;
};

// Adversarial-removal faithfulness: per test user, aggregate importance
// over the current top-10 recommendations, remove the top-n scored nodes
// from that user's inference input only, re-encode with unchanged
// parameters and measure the relative Recall@10 drop.
ShiftReport faithfulness_shift(const ModelParams& params, const HeteroGraph& graph,
                               const DatasetSplit& split, const std::vector<int>& budgets,
                               RemovalStrategy strategy, RemovalKind kind, int runs,
                               uint64_t seed);

const char* strategy_name(RemovalStrategy s);
const char* kind_name(RemovalKind k);

}  // namespace facrec

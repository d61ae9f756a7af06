#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "facrec/decoder.hpp"
#include "facrec/encoder.hpp"
#include "facrec/graph.hpp"
#include "facrec/params.hpp"

namespace facrec {

struct MetricsReport {
    std::string split_label;
    std::vector<int> k_list;
    std::vector<int> users;                            // users actually evaluated
    std::vector<std::vector<double>> recall_per_user;  // [user][k index]
    std::vector<std::vector<double>> ndcg_per_user;
    std::vector<double> mean_recall;
    std::vector<double> mean_ndcg;
    int skipped_empty_truth = 0;

    std::string to_tsv() const;
    std::string to_text() const;  // one metric per line, machine-parseable
};

// Scores every item outside the user's training interactions with the
// mean-mode representation and returns them sorted by descending score,
// ties broken by ascending item index. An edge mask re-encodes the user
// with the masked neighborhood while keeping the original candidate
// exclusion.
std::vector<int> rank_items(int u, const ModelParams& params, const HeteroGraph& graph,
                            const ItemCache* cache = nullptr, const EdgeMask* mask = nullptr);

// |top-k intersect truth| / |truth|
double recall_at_k(const std::vector<int>& ranked, const std::unordered_set<int>& truth, int k);

// binary-relevance DCG over positions 1..k normalized by the ideal DCG
// with min(k, |truth|) leading hits
double ndcg_at_k(const std::vector<int>& ranked, const std::unordered_set<int>& truth, int k);

enum class EvalGroup { Val, Test };

// Mean-mode metrics over a held-out user group; users with empty truth are
// skipped and counted. Parallel over users against the frozen parameters.
MetricsReport evaluate(const ModelParams& params, const HeteroGraph& graph,
                       const DatasetSplit& split, EvalGroup group, const std::vector<int>& k_list);

}  // namespace facrec

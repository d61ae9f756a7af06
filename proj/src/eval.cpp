#include "facrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace facrec {

std::vector<int> rank_items(int u, const ModelParams& params, const HeteroGraph& graph,
                            const ItemCache* cache, const EdgeMask* mask) {
    if (graph.user_items[u].empty())
        throw std::runtime_error("rank_items: user " + std::to_string(u) +
                                 " has no training interactions");
    ItemCache local;
    if (params.layout.tied && cache == nullptr) {
        // tied scoring reads encoder means, so a cache is required
        local = build_item_cache(graph, params);
        cache = &local;
    }
    UserEncoding enc;
    if (cache && (mask == nullptr || mask->empty()))
        enc = encode_user_cached(u, graph, params, *cache);
    else
        enc = encode_user(u, graph, params, mask, /*empty_fallback=*/mask != nullptr);
    const UserRepresentation rep = realize(enc, RealizeMode::Mean, nullptr);

    // candidate exclusion always uses the unmasked training items
    std::vector<char> excluded(graph.item_count(), 0);
    for (int t : graph.user_items[u]) excluded[t] = 1;

    std::vector<std::pair<double, int>> scored;
    scored.reserve(graph.item_count());
    for (int t = 0; t < graph.item_count(); ++t) {
        if (excluded[t]) continue;
        std::vector<float> affil_local;
        std::span<const float> affil;
        if (cache) {
            affil = cache->item_affil_row(t);
        } else {
            affil_local = item_affiliation(t, params);
            affil = affil_local;
        }
        scored.emplace_back(score_pair(rep, t, params, affil, cache), t);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> ranked(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) ranked[i] = scored[i].second;
    return ranked;
}

double recall_at_k(const std::vector<int>& ranked, const std::unordered_set<int>& truth, int k) {
    if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
    if (truth.empty()) throw std::invalid_argument("recall_at_k: empty truth set");
    const size_t top = std::min(static_cast<size_t>(k), ranked.size());
    size_t hits = 0;
    for (size_t i = 0; i < top; ++i)
        if (truth.count(ranked[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_at_k(const std::vector<int>& ranked, const std::unordered_set<int>& truth, int k) {
    if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
    if (truth.empty()) throw std::invalid_argument("ndcg_at_k: empty truth set");
    const size_t top = std::min(static_cast<size_t>(k), ranked.size());
    double dcg = 0.0;
    for (size_t i = 0; i < top; ++i)
        if (truth.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    const size_t ideal = std::min(static_cast<size_t>(k), truth.size());
    double idcg = 0.0;
    for (size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

MetricsReport evaluate(const ModelParams& params, const HeteroGraph& graph,
                       const DatasetSplit& split, EvalGroup group,
                       const std::vector<int>& k_list) {
    const auto& users = group == EvalGroup::Val ? split.val_users : split.test_users;
    const auto& truths = group == EvalGroup::Val ? split.val_truth : split.test_truth;
    if (users.empty()) throw std::invalid_argument("evaluate: empty user group");
    for (int k : k_list)
        if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");

    MetricsReport rep;
    rep.split_label = group == EvalGroup::Val ? "val" : "test";
    rep.k_list = k_list;

    const ItemCache cache = build_item_cache(graph, params);

    const int n = static_cast<int>(users.size());
    std::vector<std::vector<double>> recall(n), ndcg(n);
    std::vector<char> skipped(n, 0);

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        if (truths[i].empty()) {
            skipped[i] = 1;
            continue;
        }
        const std::unordered_set<int> truth(truths[i].begin(), truths[i].end());
        const auto ranked = rank_items(users[i], params, graph, &cache);
        recall[i].reserve(k_list.size());
        ndcg[i].reserve(k_list.size());
        for (int k : k_list) {
            recall[i].push_back(recall_at_k(ranked, truth, k));
            ndcg[i].push_back(ndcg_at_k(ranked, truth, k));
        }
    }

    for (int i = 0; i < n; ++i) {
        if (skipped[i]) {
            ++rep.skipped_empty_truth;
            continue;
        }
        rep.users.push_back(users[i]);
        rep.recall_per_user.push_back(std::move(recall[i]));
        rep.ndcg_per_user.push_back(std::move(ndcg[i]));
    }
    if (rep.users.empty()) throw std::runtime_error("evaluate: all users had empty truth");

    rep.mean_recall.assign(k_list.size(), 0.0);
    rep.mean_ndcg.assign(k_list.size(), 0.0);
    for (size_t i = 0; i < rep.users.size(); ++i)
        for (size_t j = 0; j < k_list.size(); ++j) {
            rep.mean_recall[j] += rep.recall_per_user[i][j];
            rep.mean_ndcg[j] += rep.ndcg_per_user[i][j];
        }
    for (size_t j = 0; j < k_list.size(); ++j) {
        rep.mean_recall[j] /= static_cast<double>(rep.users.size());
        rep.mean_ndcg[j] /= static_cast<double>(rep.users.size());
    }
    return rep;
}

std::string MetricsReport::to_tsv() const {
    std::ostringstream os;
    os << "user";
    for (int k : k_list) os << "\trecall@" << k;
    for (int k : k_list) os << "\tndcg@" << k;
    os << '\n';
    os.precision(10);
    for (size_t i = 0; i < users.size(); ++i) {
        os << users[i];
        for (double v : recall_per_user[i]) os << '\t' << v;
        for (double v : ndcg_per_user[i]) os << '\t' << v;
        os << '\n';
    }
    os << "mean";
    for (double v : mean_recall) os << '\t' << v;
    for (double v : mean_ndcg) os << '\t' << v;
    os << '\n';
    return os.str();
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "split=" << split_label << '\n';
    os << "users=" << users.size() << '\n';
    os << "skipped_empty_truth=" << skipped_empty_truth << '\n';
    for (size_t j = 0; j < k_list.size(); ++j)
        os << "recall@" << k_list[j] << '=' << mean_recall[j] << '\n';
    for (size_t j = 0; j < k_list.size(); ++j)
        os << "ndcg@" << k_list[j] << '=' << mean_ndcg[j] << '\n';
    return os.str();
}

}  // namespace facrec

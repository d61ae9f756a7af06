#include "facrec/reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "facrec/decoder.hpp"

namespace facrec::ref {

namespace {

std::vector<int> candidate_set(const HeteroGraph& graph, const TrainConfig& cfg, int u,
                               uint64_t noise_key) {
    const int t_count = graph.item_count();
    const auto& nbrs = graph.user_items[u];
    if (cfg.softmax_samples <= 0) {
        std::vector<int> all(t_count);
        for (int t = 0; t < t_count; ++t) all[t] = t;
        return all;
    }
    std::vector<int> cands = nbrs;
    SeededRng neg_rng = user_negative_rng(noise_key, u);
    const int avail = t_count - static_cast<int>(nbrs.size());
    const int want = std::min(cfg.softmax_samples, avail);
    std::vector<char> drawn(t_count, 0);
    int got = 0;
    while (got < want) {
        const int t = static_cast<int>(neg_rng.uniform_int(t_count));
        if (drawn[t]) continue;
        drawn[t] = 1;
        if (std::binary_search(nbrs.begin(), nbrs.end(), t)) continue;
        cands.push_back(t);
        ++got;
    }
    return cands;
}

}  // namespace

LossBreakdown elbo_loss_serial(const HeteroGraph& graph, const ModelParams& params,
                               const TrainConfig& cfg, std::span<const int> users,
                               uint64_t noise_key) {
    cfg.validate();
    if (users.empty()) throw std::invalid_argument("elbo_loss_serial: empty batch");
    ItemCache cache;  // tied mode scores against encoder means
    const ItemCache* cache_ptr = nullptr;
    if (cfg.decoder_tied) {
        cache = build_item_cache(graph, params);
        cache_ptr = &cache;
    }

    LossBreakdown loss;
    for (int u : users) {
        const auto& nbrs = graph.user_items[u];
        if (nbrs.empty())
            throw std::runtime_error("elbo_loss_serial: user has no training interactions");

        const UserEncoding full = encode_user(u, graph, params);
        double kl_u = 0.0;
        for (const auto& s : full.itm) kl_u += gaussian_kl<float>(s.mu, s.sigma);
        for (const auto& s : full.ent) kl_u += gaussian_kl<float>(s.mu, s.sigma);
        if (cfg.decoder_tied) {
            for (int t : nbrs) {
                const ItemEncoding ie = encode_item(t, graph, params);
                for (const auto& s : ie.ent) kl_u += gaussian_kl<float>(s.mu, s.sigma);
            }
        }
        loss.kl += kl_u;

        const std::vector<int> cands = candidate_set(graph, cfg, u, noise_key);
        SeededRng eps_rng = user_noise_rng(noise_key, u);
        double nll_u = 0.0;
        for (int s = 0; s < cfg.mc_samples; ++s) {
            if (!cfg.exclude_target_from_neighborhood) {
                const UserRepresentation rep = realize(full, RealizeMode::Sampled, &eps_rng);
                nll_u += -log_likelihood(rep, nbrs, cands, params, cache_ptr);
            } else {
                // reuse one epsilon draw across the per-target encodings
                std::vector<std::vector<float>> eps_i(params.c2()), eps_e(params.c1());
                for (auto& v : eps_i) {
                    v.resize(params.d());
                    for (auto& x : v) x = static_cast<float>(eps_rng.normal());
                }
                for (auto& v : eps_e) {
                    v.resize(params.d());
                    for (auto& x : v) x = static_cast<float>(eps_rng.normal());
                }
                for (int target : nbrs) {
                    EdgeMask mask;
                    mask.removed_items.insert(target);
                    const UserEncoding enc =
                        encode_user(u, graph, params, &mask, /*empty_fallback=*/true);
                    UserRepresentation rep;
                    rep.mode = RealizeMode::Sampled;
                    for (int c = 0; c < params.c2(); ++c) {
                        std::vector<float> z(params.d());
                        for (int i = 0; i < params.d(); ++i)
                            z[i] = enc.itm[c].mu[i] + enc.itm[c].sigma[i] * eps_i[c][i];
                        rep.itm.push_back(std::move(z));
                    }
                    for (int c = 0; c < params.c1(); ++c) {
                        std::vector<float> z(params.d());
                        for (int i = 0; i < params.d(); ++i)
                            z[i] = enc.ent[c].mu[i] + enc.ent[c].sigma[i] * eps_e[c][i];
                        rep.ent.push_back(std::move(z));
                    }
                    nll_u += -log_likelihood(rep, {target}, cands, params, cache_ptr);
                }
            }
        }
        loss.negative_log_likelihood += nll_u / cfg.mc_samples;
    }
    const double b = static_cast<double>(users.size());
    loss.negative_log_likelihood /= b;
    loss.kl /= b;
    double l2 = 0.0;
    for (float x : params.flat) l2 += static_cast<double>(x) * x;
    loss.l2 = l2;
    loss.total = loss.negative_log_likelihood + loss.kl + cfg.l2_weight * loss.l2;
    return loss;
}

std::vector<int> rank_items_serial(int u, const ModelParams& params, const HeteroGraph& graph) {
    return rank_items(u, params, graph, nullptr, nullptr);
}

MetricsReport evaluate_serial(const ModelParams& params, const HeteroGraph& graph,
                              const DatasetSplit& split, EvalGroup group,
                              const std::vector<int>& k_list) {
    const auto& users = group == EvalGroup::Val ? split.val_users : split.test_users;
    const auto& truths = group == EvalGroup::Val ? split.val_truth : split.test_truth;
    if (users.empty()) throw std::invalid_argument("evaluate_serial: empty user group");

    MetricsReport rep;
    rep.split_label = group == EvalGroup::Val ? "val" : "test";
    rep.k_list = k_list;
    for (size_t i = 0; i < users.size(); ++i) {
        if (truths[i].empty()) {
            ++rep.skipped_empty_truth;
            continue;
        }
        const std::unordered_set<int> truth(truths[i].begin(), truths[i].end());
        const auto ranked = rank_items_serial(users[i], params, graph);
        std::vector<double> r, n;
        for (int k : k_list) {
            r.push_back(recall_at_k(ranked, truth, k));
            n.push_back(ndcg_at_k(ranked, truth, k));
        }
        rep.users.push_back(users[i]);
        rep.recall_per_user.push_back(std::move(r));
        rep.ndcg_per_user.push_back(std::move(n));
    }
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

}  // namespace facrec::ref

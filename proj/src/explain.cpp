#include "facrec/explain.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "facrec/decoder.hpp"
#include "facrec/rng.hpp"

namespace facrec {

namespace {

double dotv(const std::vector<float>& a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

// decoder terms for pair (u_rep, t): item_terms[c] = p(t,c) exp(<itm_c, d_slf>),
// ent_terms[c] = exp(<ent_c, d_ent_c>)
void decoder_terms(const UserRepresentation& rep, int t, const ModelParams& params,
                   const ItemCache& cache, std::vector<double>& item_terms,
                   std::vector<double>& ent_terms) {
    const int c1 = params.c1(), c2 = params.c2(), d = params.d();
    const auto affil = cache.item_affil_row(t);
    item_terms.resize(c2);
    ent_terms.resize(c1);
    const auto d_slf = params.dict_base(t);
    for (int c = 0; c < c2; ++c) {
        const double x = std::min(dotv(rep.itm[c], d_slf), kScoreExpClamp);
        item_terms[c] = static_cast<double>(affil[c]) * std::exp(x);
    }
    for (int c = 0; c < c1; ++c) {
        std::span<const float> d_ent =
            params.layout.tied
                ? std::span<const float>(cache.mu_seg(t, c), static_cast<size_t>(d))
                : params.dict_ent(t, c);
        const double x = std::min(dotv(rep.ent[c], d_ent), kScoreExpClamp);
        ent_terms[c] = std::exp(x);
    }
}

int argmax(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

int argmax_span(std::span<const float> v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

const char* kFactorColors[] = {"#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00",
                               "#a65628", "#f781bf", "#999999", "#66c2a5", "#ffd92f"};

std::string node_name(NodeKind kind, int idx, const IdMap* ids) {
    switch (kind) {
        case NodeKind::User:
            return ids && idx < static_cast<int>(ids->users.size()) ? ids->users[idx]
                                                                    : "u" + std::to_string(idx);
        case NodeKind::Item:
            return ids && idx < static_cast<int>(ids->items.size()) ? ids->items[idx]
                                                                    : "t" + std::to_string(idx);
        default:
            return ids && idx < static_cast<int>(ids->entities.size()) ? ids->entities[idx]
                                                                       : "e" + std::to_string(idx);
    }
}

}  // namespace

ImportanceScores item_importance(int j, int u, int t, const ModelParams& params,
                                 const HeteroGraph& graph, const ItemCache& cache) {
    const int c2 = params.c2();
    ImportanceScores out;
    out.per_factor.assign(c2, 0.0);
    const auto& nbrs = graph.user_items[u];
    if (!std::binary_search(nbrs.begin(), nbrs.end(), j)) return out;

    const UserEncoding enc = encode_user_cached(u, graph, params, cache);
    const UserRepresentation rep = realize(enc, RealizeMode::Mean, nullptr);

    const auto affil_t = cache.item_affil_row(t);
    const auto affil_j = cache.item_affil_row(j);
    const auto d_slf = params.dict_base(t);
    const double inv_n = 1.0 / static_cast<double>(nbrs.size());
    for (int c = 0; c < c2; ++c) {
        const double x = std::min(dotv(rep.itm[c], d_slf), kScoreExpClamp);
        out.per_factor[c] = static_cast<double>(affil_t[c]) * std::exp(x) *
                            static_cast<double>(affil_j[c]) * inv_n;
        out.total += out.per_factor[c];
    }
    return out;
}

ImportanceScores entity_importance(int j, int u, int t, const ModelParams& params,
                                   const HeteroGraph& graph, const ItemCache& cache) {
    const int c1 = params.c1(), d = params.d();
    ImportanceScores out;
    out.per_factor.assign(c1, 0.0);
    const auto& nbrs = graph.user_items[u];
    if (nbrs.empty()) return out;

    // path weight: sum over historical items m linking to j of p(j,c)/(|N_u| |N_m|)
    const auto affil_j = cache.ent_affil_row(j);
    std::vector<double> path(c1, 0.0);
    const double inv_nu = 1.0 / static_cast<double>(nbrs.size());
    bool connected = false;
    for (int m : nbrs) {
        const auto& ents = graph.item_entities[m];
        if (!std::binary_search(ents.begin(), ents.end(), j)) continue;
        connected = true;
        const double w = inv_nu / static_cast<double>(ents.size());
        for (int c = 0; c < c1; ++c) path[c] += w * static_cast<double>(affil_j[c]);
    }
    if (!connected) return out;

    const UserEncoding enc = encode_user_cached(u, graph, params, cache);
    const UserRepresentation rep = realize(enc, RealizeMode::Mean, nullptr);
    for (int c = 0; c < c1; ++c) {
        std::span<const float> d_ent =
            params.layout.tied
                ? std::span<const float>(cache.mu_seg(t, c), static_cast<size_t>(d))
                : params.dict_ent(t, c);
        const double x = std::min(dotv(rep.ent[c], d_ent), kScoreExpClamp);
        out.per_factor[c] = std::exp(x) * path[c];
        out.total += out.per_factor[c];
    }
    return out;
}

Explanation explain(int u, int t, const ModelParams& params, const HeteroGraph& graph, int top_m,
                    const ItemCache* cache_in) {
    if (top_m < 0) throw std::invalid_argument("explain: top_m must be >= 0");
    if (u < 0 || u >= graph.user_count()) throw std::out_of_range("explain: bad user index");
    if (t < 0 || t >= graph.item_count()) throw std::out_of_range("explain: bad item index");
    ItemCache local;
    if (!cache_in) {
        local = build_item_cache(graph, params);
        cache_in = &local;
    }
    const ItemCache& cache = *cache_in;

    Explanation ex;
    ex.user = u;
    ex.target = t;
    ex.target_factor = argmax_span(cache.item_affil_row(t));

    const auto& nbrs = graph.user_items[u];
    for (int j : nbrs) {
        const auto s = item_importance(j, u, t, params, graph, cache);
        Contribution c;
        c.node = j;
        c.kind = NodeKind::Item;
        c.per_factor = s.per_factor;
        c.total = s.total;
        c.dominant_factor = argmax(s.per_factor);
        ex.items.push_back(std::move(c));
    }
    std::set<int> reachable;
    for (int m : nbrs) reachable.insert(graph.item_entities[m].begin(), graph.item_entities[m].end());
    for (int j : reachable) {
        const auto s = entity_importance(j, u, t, params, graph, cache);
        Contribution c;
        c.node = j;
        c.kind = NodeKind::Entity;
        c.per_factor = s.per_factor;
        c.total = s.total;
        c.dominant_factor = argmax(s.per_factor);
        ex.entities.push_back(std::move(c));
    }
    auto by_score = [](const Contribution& a, const Contribution& b) {
        if (a.total != b.total) return a.total > b.total;
        return a.node < b.node;
    };
    std::sort(ex.items.begin(), ex.items.end(), by_score);
    std::sort(ex.entities.begin(), ex.entities.end(), by_score);
    if (static_cast<int>(ex.items.size()) > top_m) ex.items.resize(top_m);
    if (static_cast<int>(ex.entities.size()) > top_m) ex.entities.resize(top_m);
    return ex;
}

std::string explanation_to_json(const Explanation& ex, const IdMap* ids) {
    nlohmann::json j;
    j["user"] = node_name(NodeKind::User, ex.user, ids);
    j["target"] = node_name(NodeKind::Item, ex.target, ids);
    j["target_factor"] = ex.target_factor + 1;
    auto dump = [&](const std::vector<Contribution>& contribs) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : contribs) {
            nlohmann::json e;
            e["node"] = node_name(c.kind, c.node, ids);
            e["kind"] = c.kind == NodeKind::Item ? "item" : "entity";
            e["factor"] = c.dominant_factor + 1;
            e["score"] = c.total;
            e["per_factor_scores"] = c.per_factor;
            arr.push_back(std::move(e));
        }
        return arr;
    };
    j["items"] = dump(ex.items);
    j["entities"] = dump(ex.entities);
    return j.dump(2) + "\n";
}

std::string explanation_to_dot(const Explanation& ex, const IdMap* ids) {
    std::ostringstream os;
    os.precision(4);
    const int n_colors = static_cast<int>(sizeof(kFactorColors) / sizeof(kFactorColors[0]));
    os << "digraph explanation {\n";
    os << "  rankdir=LR;\n";
    os << "  node [style=filled, fillcolor=white];\n";
    os << "  \"user:" << node_name(NodeKind::User, ex.user, ids) << "\" [shape=box];\n";
    os << "  \"item:" << node_name(NodeKind::Item, ex.target, ids)
       << "\" [shape=doubleoctagon, fillcolor=\"" << kFactorColors[ex.target_factor % n_colors]
       << "\"];\n";
    auto emit = [&](const std::vector<Contribution>& contribs, const char* prefix) {
        for (const auto& c : contribs) {
            const std::string name =
                std::string(prefix) + ":" + node_name(c.kind, c.node, ids);
            os << "  \"" << name << "\" [fillcolor=\""
               << kFactorColors[c.dominant_factor % n_colors] << "\"];\n";
            os << "  \"" << name << "\" -> \"item:" << node_name(NodeKind::Item, ex.target, ids)
               << "\" [label=\"" << c.total << "\"];\n";
        }
    };
    emit(ex.items, "item");
    emit(ex.entities, "entity");
    os << "}\n";
    return os.str();
}

const char* strategy_name(RemovalStrategy s) {
    return s == RemovalStrategy::Model ? "model" : "random";
}
const char* kind_name(RemovalKind k) {
    switch (k) {
        case RemovalKind::Items: return "items";
        case RemovalKind::Entities: return "entities";
        default: return "both";
    }
}

namespace {

// Per-user state precomputed once per faithfulness evaluation.
struct UserShiftState {
    int user = 0;
    std::unordered_set<int> truth;
    double recall_before = 0.0;
    bool usable = false;
    std::vector<int> item_order;    // neighborhood sorted by importance
    std::vector<int> entity_order;  // reachable entities sorted by importance
    std::vector<int> reachable;     // for random entity draws
};

}  // namespace

ShiftReport faithfulness_shift(const ModelParams& params, const HeteroGraph& graph,
                               const DatasetSplit& split, const std::vector<int>& budgets,
                               RemovalStrategy strategy, RemovalKind kind, int runs,
                               uint64_t seed) {
    if (runs < 1) throw std::invalid_argument("faithfulness_shift: runs must be >= 1");
    if (split.test_users.empty()) throw std::invalid_argument("faithfulness_shift: no test users");
    const ItemCache cache = build_item_cache(graph, params);
    const int c1 = params.c1(), c2 = params.c2();
    const int n_users = static_cast<int>(split.test_users.size());

    std::vector<UserShiftState> st(n_users);

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_users; ++i) {
        UserShiftState& s = st[i];
        s.user = split.test_users[i];
        s.truth.insert(split.test_truth[i].begin(), split.test_truth[i].end());
        if (s.truth.empty()) continue;
        const auto ranked = rank_items(s.user, params, graph, &cache);
        s.recall_before = recall_at_k(ranked, s.truth, 10);
        if (s.recall_before <= 0.0) continue;
        s.usable = true;

        const int top = std::min<size_t>(10, ranked.size());
        const UserEncoding enc = encode_user_cached(s.user, graph, params, cache);
        const UserRepresentation rep = realize(enc, RealizeMode::Mean, nullptr);

        // decoder terms summed over the top-10 recommended targets
        std::vector<double> item_terms_sum(c2, 0.0), ent_terms_sum(c1, 0.0);
        std::vector<double> item_terms, ent_terms;
        for (int r = 0; r < top; ++r) {
            decoder_terms(rep, ranked[r], params, cache, item_terms, ent_terms);
            for (int c = 0; c < c2; ++c) item_terms_sum[c] += item_terms[c];
            for (int c = 0; c < c1; ++c) ent_terms_sum[c] += ent_terms[c];
        }

        const auto& nbrs = graph.user_items[s.user];
        const double inv_nu = 1.0 / static_cast<double>(nbrs.size());
        std::vector<std::pair<double, int>> item_scores;
        for (int j : nbrs) {
            const auto affil_j = cache.item_affil_row(j);
            double total = 0.0;
            for (int c = 0; c < c2; ++c)
                total += item_terms_sum[c] * static_cast<double>(affil_j[c]) * inv_nu;
            item_scores.emplace_back(total, j);
        }
        std::set<int> reach;
        for (int m : nbrs) reach.insert(graph.item_entities[m].begin(), graph.item_entities[m].end());
        s.reachable.assign(reach.begin(), reach.end());
        std::vector<std::pair<double, int>> ent_scores;
        for (int j : s.reachable) {
            const auto affil_j = cache.ent_affil_row(j);
            std::vector<double> path(c1, 0.0);
            for (int m : nbrs) {
                const auto& ents = graph.item_entities[m];
                if (!std::binary_search(ents.begin(), ents.end(), j)) continue;
                const double w = inv_nu / static_cast<double>(ents.size());
                for (int c = 0; c < c1; ++c) path[c] += w * static_cast<double>(affil_j[c]);
            }
            double total = 0.0;
            for (int c = 0; c < c1; ++c) total += ent_terms_sum[c] * path[c];
            ent_scores.emplace_back(total, j);
        }
        auto desc = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        };
        std::sort(item_scores.begin(), item_scores.end(), desc);
        std::sort(ent_scores.begin(), ent_scores.end(), desc);
        for (const auto& [sc, j] : item_scores) s.item_order.push_back(j);
        for (const auto& [sc, j] : ent_scores) s.entity_order.push_back(j);
    }

    ShiftReport report;
    for (int n : budgets) {
        if (n < 0) throw std::invalid_argument("faithfulness_shift: negative budget");
        for (int run = 0; run < runs; ++run) {
            std::vector<double> shift_per_user(n_users, 0.0), after(n_users, 0.0);
#pragma omp parallel for schedule(static)
            for (int i = 0; i < n_users; ++i) {
                if (!st[i].usable) continue;
                const UserShiftState& s = st[i];
                EdgeMask mask;
                auto pick = [&](const std::vector<int>& order, const std::vector<int>& pool,
                                std::unordered_set<int>& out, uint64_t stream) {
                    const int want = std::min<int>(n, static_cast<int>(order.size()));
                    if (strategy == RemovalStrategy::Model) {
                        out.insert(order.begin(), order.begin() + want);
                    } else {
                        SeededRng rng =
                            SeededRng(mix_seed(seed, static_cast<uint64_t>(run))).fork(
                                mix_seed(static_cast<uint64_t>(s.user), stream));
                        std::vector<int> shuffled = pool;
                        rng.shuffle(shuffled);
                        out.insert(shuffled.begin(), shuffled.begin() + want);
                    }
                };
                if (kind == RemovalKind::Items || kind == RemovalKind::Both)
                    pick(s.item_order, graph.user_items[s.user], mask.removed_items, 11);
                if (kind == RemovalKind::Entities || kind == RemovalKind::Both)
                    pick(s.entity_order, s.reachable, mask.removed_entities, 22);

                const auto ranked = rank_items(s.user, params, graph, &cache, &mask);
                const double r_after = recall_at_k(ranked, s.truth, 10);
                after[i] = r_after;
                shift_per_user[i] = (s.recall_before - r_after) / s.recall_before;
            }
            ShiftRow row;
            row.strategy = strategy;
            row.kind = kind;
            row.n_remove = n;
            row.run = run;
            int used = 0;
            for (int i = 0; i < n_users; ++i) {
                if (!st[i].usable) continue;
                ++used;
                row.recall += st[i].recall_before;
                row.recall_prime += after[i];
                row.shift += shift_per_user[i];
            }
            row.users_evaluated = used;
            row.users_excluded = n_users - used;
            if (used > 0) {
                row.recall /= used;
                row.recall_prime /= used;
                row.shift /= used;
            }
            report.rows.push_back(row);
        }
    }
    return report;
}

std::string ShiftReport::to_tsv() const {
    std::ostringstream os;
    os.precision(10);
    os << "strategy\tkind\tn\trun\trecall\trecall_prime\tshift\tusers\texcluded\n";
    for (const auto& r : rows)
        os << strategy_name(r.strategy) << '\t' << kind_name(r.kind) << '\t' << r.n_remove << '\t'
           << r.run << '\t' << r.recall << '\t' << r.recall_prime << '\t' << r.shift << '\t'
           << r.users_evaluated << '\t' << r.users_excluded << '\n';
    return os.str();
}

double ShiftReport::mean_shift(RemovalStrategy s, RemovalKind k, int n) const {
    double acc = 0.0;
    int cnt = 0;
    for (const auto& r : rows)
        if (r.strategy == s && r.kind == k && r.n_remove == n) {
            acc += r.shift;
            ++cnt;
        }
    if (cnt == 0) throw std::invalid_argument("mean_shift: no rows for requested cell");
    return acc / cnt;
}

}  // namespace facrec

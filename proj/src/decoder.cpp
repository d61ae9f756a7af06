#include "facrec/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace facrec {

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

double dotv(const std::vector<float>& a, std::span<const float> b) {
    return dot(std::span<const float>(a), b);
}

}  // namespace

ScoreBreakdown score_pair_breakdown(const UserRepresentation& u_rep, int t,
                                    const ModelParams& params, std::span<const float> affil,
                                    const ItemCache* cache) {
    const int c1 = params.c1();
    const int c2 = params.c2();
    const int d = params.d();
    if (static_cast<int>(u_rep.itm.size()) != c2 || static_cast<int>(u_rep.ent.size()) != c1)
        throw std::invalid_argument("score_pair: representation/config mismatch");
    if (static_cast<int>(affil.size()) != c2)
        throw std::invalid_argument("score_pair: affiliation length mismatch");
    if (params.layout.tied && cache == nullptr)
        throw std::invalid_argument("score_pair: tied decoder needs an item cache");

    ScoreBreakdown out;
    out.item_terms.resize(c2);
    out.ent_terms.resize(c1);
    double total = 0.0;
    const auto d_slf = params.dict_base(t);
    for (int c = 0; c < c2; ++c) {
        const double x = std::min(dotv(u_rep.itm[c], d_slf), kScoreExpClamp);
        out.item_terms[c] = static_cast<double>(affil[c]) * std::exp(x);
        total += out.item_terms[c];
    }
    for (int c = 0; c < c1; ++c) {
        std::span<const float> d_ent =
            params.layout.tied
                ? std::span<const float>(cache->mu_seg(t, c), static_cast<size_t>(d))
                : params.dict_ent(t, c);
        const double x = std::min(dotv(u_rep.ent[c], d_ent), kScoreExpClamp);
        out.ent_terms[c] = std::exp(x);
        total += out.ent_terms[c];
    }
    out.total = total;
    return out;
}

double score_pair(const UserRepresentation& u_rep, int t, const ModelParams& params,
                  std::span<const float> affil, const ItemCache* cache) {
    return score_pair_breakdown(u_rep, t, params, affil, cache).total;
}

double log_likelihood(const UserRepresentation& u_rep, const std::vector<int>& positives,
                      const std::vector<int>& candidates, const ModelParams& params,
                      const ItemCache* cache) {
    if (candidates.empty()) throw std::invalid_argument("log_likelihood: empty candidate set");
    std::unordered_set<int> cand(candidates.begin(), candidates.end());
    for (int t : positives)
        if (!cand.count(t)) throw std::invalid_argument("log_likelihood: positive not in candidates");

    double z = 0.0;
    std::unordered_set<int> pos(positives.begin(), positives.end());
    double ll = 0.0;
    for (int t : candidates) {
        const auto affil = item_affiliation(t, params);
        const double s = score_pair(u_rep, t, params, affil, cache);
        z += s;
        if (pos.count(t)) ll += std::log(s);
    }
    ll -= static_cast<double>(positives.size()) * std::log(z);
    return ll;
}

}  // namespace facrec

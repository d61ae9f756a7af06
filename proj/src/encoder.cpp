#include "facrec/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace facrec {

namespace {

constexpr float kLogSigClip = 5.0f;

// y = W x, W row-major DxD, 64-bit accumulation per row
void matvec(const float* W, std::span<const float> x, float* y, int d) {
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        const float* row = W + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) acc += static_cast<double>(row[j]) * x[j];
        y[i] = static_cast<float>(acc);
    }
}

SegmentDistribution prior_segment(int d) {
    SegmentDistribution s;
    s.mu.assign(d, 0.0f);
    s.sigma.assign(d, 1.0f);
    return s;
}

// mu/sigma from one pre-aggregated factor vector
void map_segment(const ModelParams& p, const float* mu_map, const float* sig_map,
                 std::span<const float> agg, SegmentDistribution& out, float* h_out = nullptr,
                 float* sraw_out = nullptr) {
    const int d = p.d();
    std::vector<float> h(d);
    for (int i = 0; i < d; ++i) h[i] = std::tanh(agg[i]);
    out.mu.resize(d);
    out.sigma.resize(d);
    matvec(mu_map, h, out.mu.data(), d);
    std::vector<float> sraw(d);
    matvec(sig_map, h, sraw.data(), d);
    for (int i = 0; i < d; ++i) {
        const float clipped = std::clamp(sraw[i], -kLogSigClip, kLogSigClip);
        out.sigma[i] = std::exp(clipped);
    }
    if (h_out) std::copy(h.begin(), h.end(), h_out);
    if (sraw_out) std::copy(sraw.begin(), sraw.end(), sraw_out);
}

}  // namespace

std::vector<float> affiliation_from_base(std::span<const float> base, const float* protos, int c,
                                         int d, float gamma) {
    std::vector<float> logits(c);
    for (int i = 0; i < c; ++i)
        logits[i] = cosine(base, std::span<const float>(protos + static_cast<size_t>(i) * d, d));
    return softmax_temp(std::span<const float>(logits), gamma);
}

std::vector<float> entity_affiliation(int e, const ModelParams& params) {
    return affiliation_from_base(params.entity_base(e), params.flat.data() + params.layout.ent_proto,
                                 params.c1(), params.d(), params.layout.fc.gamma);
}

std::vector<float> item_affiliation(int t, const ModelParams& params) {
    return affiliation_from_base(params.item_base(t), params.flat.data() + params.layout.itm_proto,
                                 params.c2(), params.d(), params.layout.fc.gamma);
}

ItemEncoding encode_item(int t, const HeteroGraph& graph, const ModelParams& params,
                         const EdgeMask* mask) {
    if (t < 0 || t >= graph.item_count()) throw std::out_of_range("encode_item: bad item index");
    const int d = params.d();
    const int c1 = params.c1();

    ItemEncoding enc;
    enc.base.assign(params.item_base(t).begin(), params.item_base(t).end());
    enc.ent.resize(c1);

    std::vector<int> nbrs;
    nbrs.reserve(graph.item_entities[t].size());
    for (int e : graph.item_entities[t])
        if (!mask || !mask->removed_entities.count(e)) nbrs.push_back(e);

    if (nbrs.empty()) {
        for (int c = 0; c < c1; ++c) enc.ent[c] = prior_segment(d);
        return enc;
    }

    const float inv_n = 1.0f / static_cast<float>(nbrs.size());
    std::vector<float> agg(static_cast<size_t>(c1) * d, 0.0f);
    for (int e : nbrs) {
        const auto p_e = entity_affiliation(e, params);
        const auto z = params.entity_base(e);
        for (int c = 0; c < c1; ++c) {
            const float w = p_e[c] * inv_n;
            float* a = agg.data() + static_cast<size_t>(c) * d;
            for (int i = 0; i < d; ++i) a[i] += w * z[i];
        }
    }
    for (int c = 0; c < c1; ++c)
        map_segment(params, params.ent_map_mu(), params.ent_map_logsig(),
                    {agg.data() + static_cast<size_t>(c) * d, static_cast<size_t>(d)}, enc.ent[c]);
    return enc;
}

namespace {

UserEncoding encode_user_impl(int u, const HeteroGraph& graph, const ModelParams& params,
                              const EdgeMask* mask, bool empty_fallback, const ItemCache* cache) {
    if (u < 0 || u >= graph.user_count()) throw std::out_of_range("encode_user: bad user index");
    const int d = params.d();
    const int c1 = params.c1();
    const int c2 = params.c2();

    std::vector<int> nbrs;
    nbrs.reserve(graph.user_items[u].size());
    for (int t : graph.user_items[u])
        if (!mask || !mask->removed_items.count(t)) nbrs.push_back(t);

    UserEncoding enc;
    enc.itm.resize(c2);
    enc.ent.resize(c1);
    if (nbrs.empty()) {
        if (!empty_fallback) throw std::runtime_error("encode_user: empty training neighborhood");
        for (int c = 0; c < c2; ++c) enc.itm[c] = prior_segment(d);
        for (int c = 0; c < c1; ++c) enc.ent[c] = prior_segment(d);
        return enc;
    }

    const float inv_n = 1.0f / static_cast<float>(nbrs.size());

    // item-side aggregate weighted by affiliations
    std::vector<float> agg(static_cast<size_t>(c2) * d, 0.0f);
    for (int t : nbrs) {
        std::vector<float> p_t_local;
        std::span<const float> p_t;
        if (cache) {
            p_t = cache->item_affil_row(t);
        } else {
            p_t_local = item_affiliation(t, params);
            p_t = p_t_local;
        }
        const auto z = params.item_base(t);
        for (int c = 0; c < c2; ++c) {
            const float w = p_t[c] * inv_n;
            float* a = agg.data() + static_cast<size_t>(c) * d;
            for (int i = 0; i < d; ++i) a[i] += w * z[i];
        }
    }
    for (int c = 0; c < c2; ++c)
        map_segment(params, params.itm_map_mu(), params.itm_map_logsig(),
                    {agg.data() + static_cast<size_t>(c) * d, static_cast<size_t>(d)}, enc.itm[c]);

    // entity-side: mean of the neighbor items' segment parameters
    for (int c = 0; c < c1; ++c) {
        enc.ent[c].mu.assign(d, 0.0f);
        enc.ent[c].sigma.assign(d, 0.0f);
    }
    const bool entity_masked = mask && !mask->removed_entities.empty();
    for (int t : nbrs) {
        if (cache && !entity_masked) {
            for (int c = 0; c < c1; ++c) {
                const float* mu = cache->mu_seg(t, c);
                const float* sg = cache->sigma_seg(t, c);
                for (int i = 0; i < d; ++i) {
                    enc.ent[c].mu[i] += inv_n * mu[i];
                    enc.ent[c].sigma[i] += inv_n * sg[i];
                }
            }
        } else {
            const ItemEncoding ie = encode_item(t, graph, params, mask);
            for (int c = 0; c < c1; ++c) {
                for (int i = 0; i < d; ++i) {
                    enc.ent[c].mu[i] += inv_n * ie.ent[c].mu[i];
                    enc.ent[c].sigma[i] += inv_n * ie.ent[c].sigma[i];
                }
            }
        }
    }
    return enc;
}

}  // namespace

UserEncoding encode_user(int u, const HeteroGraph& graph, const ModelParams& params,
                         const EdgeMask* mask, bool empty_fallback) {
    return encode_user_impl(u, graph, params, mask, empty_fallback, nullptr);
}

UserEncoding encode_user_cached(int u, const HeteroGraph& graph, const ModelParams& params,
                                const ItemCache& cache) {
    return encode_user_impl(u, graph, params, nullptr, false, &cache);
}

UserRepresentation realize(const UserEncoding& enc, RealizeMode mode, SeededRng* rng) {
    UserRepresentation rep;
    rep.mode = mode;
    auto one = [&](const SegmentDistribution& s) {
        if (mode == RealizeMode::Mean) return s.mu;
        return reparam_sample(s.mu, s.sigma, *rng);
    };
    if (mode == RealizeMode::Sampled && rng == nullptr)
        throw std::invalid_argument("realize: sampled mode needs an rng");
    rep.itm.reserve(enc.itm.size());
    for (const auto& s : enc.itm) rep.itm.push_back(one(s));
    rep.ent.reserve(enc.ent.size());
    for (const auto& s : enc.ent) rep.ent.push_back(one(s));
    return rep;
}

std::vector<std::vector<float>> realize_item(const ItemEncoding& enc, RealizeMode mode,
                                             SeededRng* rng) {
    if (mode == RealizeMode::Sampled && rng == nullptr)
        throw std::invalid_argument("realize_item: sampled mode needs an rng");
    std::vector<std::vector<float>> segs;
    segs.reserve(enc.ent.size());
    for (const auto& s : enc.ent) {
        if (mode == RealizeMode::Mean)
            segs.push_back(s.mu);
        else
            segs.push_back(reparam_sample(s.mu, s.sigma, *rng));
    }
    return segs;
}

ItemCache build_item_cache(const HeteroGraph& graph, const ModelParams& params) {
    const int d = params.d();
    const int c1 = params.c1();
    const int c2 = params.c2();
    const int n_items = graph.item_count();
    const int n_entities = graph.entity_count();

    ItemCache cache;
    cache.c1 = c1;
    cache.c2 = c2;
    cache.d = d;
    cache.ent_affil.resize(static_cast<size_t>(n_entities) * c1);
    cache.itm_affil.resize(static_cast<size_t>(n_items) * c2);
    cache.h.resize(static_cast<size_t>(n_items) * c1 * d);
    cache.mu.resize(static_cast<size_t>(n_items) * c1 * d);
    cache.sig_raw.resize(static_cast<size_t>(n_items) * c1 * d);
    cache.sigma.resize(static_cast<size_t>(n_items) * c1 * d);

#pragma omp parallel for schedule(static)
    for (int e = 0; e < n_entities; ++e) {
        const auto p = entity_affiliation(e, params);
        std::copy(p.begin(), p.end(), cache.ent_affil.begin() + static_cast<size_t>(e) * c1);
    }

#pragma omp parallel for schedule(static)
    for (int t = 0; t < n_items; ++t) {
        const auto p = item_affiliation(t, params);
        std::copy(p.begin(), p.end(), cache.itm_affil.begin() + static_cast<size_t>(t) * c2);

        const auto& nbrs = graph.item_entities[t];
        const size_t base = static_cast<size_t>(t) * c1 * d;
        if (nbrs.empty()) {
            for (int c = 0; c < c1; ++c) {
                for (int i = 0; i < d; ++i) {
                    cache.h[base + static_cast<size_t>(c) * d + i] = 0.0f;
                    cache.mu[base + static_cast<size_t>(c) * d + i] = 0.0f;
                    cache.sig_raw[base + static_cast<size_t>(c) * d + i] = 0.0f;
                    cache.sigma[base + static_cast<size_t>(c) * d + i] = 1.0f;
                }
            }
            continue;
        }
        const float inv_n = 1.0f / static_cast<float>(nbrs.size());
        std::vector<float> agg(static_cast<size_t>(c1) * d, 0.0f);
        for (int e : nbrs) {
            const auto p_e = cache.ent_affil_row(e);
            const auto z = params.entity_base(e);
            for (int c = 0; c < c1; ++c) {
                const float w = p_e[c] * inv_n;
                float* a = agg.data() + static_cast<size_t>(c) * d;
                for (int i = 0; i < d; ++i) a[i] += w * z[i];
            }
        }
        for (int c = 0; c < c1; ++c) {
            SegmentDistribution seg;
            map_segment(params, params.ent_map_mu(), params.ent_map_logsig(),
                        {agg.data() + static_cast<size_t>(c) * d, static_cast<size_t>(d)}, seg,
                        cache.h.data() + base + static_cast<size_t>(c) * d,
                        cache.sig_raw.data() + base + static_cast<size_t>(c) * d);
            std::copy(seg.mu.begin(), seg.mu.end(),
                      cache.mu.begin() + base + static_cast<size_t>(c) * d);
            std::copy(seg.sigma.begin(), seg.sigma.end(),
                      cache.sigma.begin() + base + static_cast<size_t>(c) * d);
        }
    }
    return cache;
}

}  // namespace facrec

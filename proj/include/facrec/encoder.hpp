#pragma once

#include <span>
#include <unordered_set>
#include <vector>

#include "facrec/graph.hpp"
#include "facrec/numerics.hpp"
#include "facrec/params.hpp"

namespace facrec {

// Per-factor diagonal Gaussian over one D-dimensional segment.
struct SegmentDistribution {
    std::vector<float> mu;
    std::vector<float> sigma;
};

struct ItemEncoding {
    std::vector<float> base;               // deterministic self embedding
    std::vector<SegmentDistribution> ent;  // C1 entity-side segments
};

struct UserEncoding {
    std::vector<SegmentDistribution> itm;  // C2 item-side segments
    std::vector<SegmentDistribution> ent;  // C1 entity-side segments
};

enum class RealizeMode { Sampled, Mean };

struct UserRepresentation {
    std::vector<std::vector<float>> itm;
    std::vector<std::vector<float>> ent;
    RealizeMode mode = RealizeMode::Mean;
};

// Per-user inference-time edge removals used by the faithfulness protocol.
// Removed items drop out of the user's neighborhood; removed entities drop
// out of every neighbor item's entity list while encoding this user.
struct EdgeMask {
    std::unordered_set<int> removed_items;
    std::unordered_set<int> removed_entities;
    bool empty() const { return removed_items.empty() && removed_entities.empty(); }
};

// softmax over factor cosines at temperature gamma
std::vector<float> affiliation_from_base(std::span<const float> base, const float* protos, int c,
                                         int d, float gamma);

std::vector<float> entity_affiliation(int e, const ModelParams& params);
std::vector<float> item_affiliation(int t, const ModelParams& params);

// Aggregates entity neighbors per factor, then maps through
// mu = Wmu tanh(a), sigma = exp(clamp(Wsig tanh(a), -5, 5)). An empty
// neighborhood yields prior segments (mu = 0, sigma = 1).
ItemEncoding encode_item(int t, const HeteroGraph& graph, const ModelParams& params,
                         const EdgeMask* mask = nullptr);

// Item-side segments aggregate neighbor base embeddings by affiliation; the
// entity-side segments are the parameter-level mean of the neighbor items'
// segments. Throws on an empty neighborhood unless empty_fallback is set,
// in which case every segment falls back to the prior.
UserEncoding encode_user(int u, const HeteroGraph& graph, const ModelParams& params,
                         const EdgeMask* mask = nullptr, bool empty_fallback = false);

UserRepresentation realize(const UserEncoding& enc, RealizeMode mode, SeededRng* rng);
std::vector<std::vector<float>> realize_item(const ItemEncoding& enc, RealizeMode mode,
                                             SeededRng* rng);

// Batch-computed per-item state reused across users within one parameter
// snapshot: affiliations, segment parameters and the tanh activations the
// backward pass needs.
struct ItemCache {
    int c1 = 0, c2 = 0, d = 0;
    std::vector<float> ent_affil;  // [E, C1]
    std::vector<float> itm_affil;  // [T, C2]
    std::vector<float> h;          // [T, C1, D] tanh of the factor aggregate
    std::vector<float> mu;         // [T, C1, D]
    std::vector<float> sig_raw;    // [T, C1, D] pre-clamp log sigma
    std::vector<float> sigma;      // [T, C1, D]

    std::span<const float> item_affil_row(int t) const {
        return {itm_affil.data() + static_cast<size_t>(t) * c2, static_cast<size_t>(c2)};
    }
    std::span<const float> ent_affil_row(int e) const {
        return {ent_affil.data() + static_cast<size_t>(e) * c1, static_cast<size_t>(c1)};
    }
    const float* mu_seg(int t, int c) const {
        return mu.data() + (static_cast<size_t>(t) * c1 + c) * d;
    }
    const float* sigma_seg(int t, int c) const {
        return sigma.data() + (static_cast<size_t>(t) * c1 + c) * d;
    }
};

ItemCache build_item_cache(const HeteroGraph& graph, const ModelParams& params);

// encode_user against a prebuilt cache (identical output to encode_user)
UserEncoding encode_user_cached(int u, const HeteroGraph& graph, const ModelParams& params,
                                const ItemCache& cache);

}  // namespace facrec

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "facrec/graph.hpp"
#include "facrec/rng.hpp"

namespace facrec {

struct FactorConfig {
    int c1 = 4;          // entity-factor count
    int c2 = 4;          // item-factor count
    int d = 16;          // per-factor embedding dimension
    float gamma = 0.1f;  // affiliation temperature

    void validate() const {
        if (c1 < 1 || c2 < 1 || d < 1) throw std::invalid_argument("factor config: counts must be >= 1");
        if (!(gamma > 0.0f)) throw std::invalid_argument("factor config: gamma must be > 0");
    }
};

// Offsets of the named tensors inside one flat float vector. Keeping every
// learnable value in one buffer makes Adam, gradient accumulation, l2 and
// checkpointing uniform.
struct ParamLayout {
    int n_items = 0;
    int n_entities = 0;
    FactorConfig fc;
    bool tied = false;

    size_t entity_base = 0;    // [E, D]
    size_t item_base = 0;      // [T, D]
    size_t ent_proto = 0;      // [C1, D]
    size_t itm_proto = 0;      // [C2, D]
    size_t ent_map_mu = 0;     // [D, D]
    size_t ent_map_logsig = 0; // [D, D]
    size_t itm_map_mu = 0;     // [D, D]
    size_t itm_map_logsig = 0; // [D, D]
    size_t dict_base = 0;      // [T, D] (untied only)
    size_t dict_ent = 0;       // [T, C1, D] (untied only)
    size_t total = 0;

    struct NamedTensor {
        std::string name;
        size_t offset;
        std::vector<size_t> shape;
    };
    std::vector<NamedTensor> tensors;

    static ParamLayout make(int n_items, int n_entities, const FactorConfig& fc, bool tied);
};

struct ModelParams {
    ParamLayout layout;
    std::vector<float> flat;

    const float* data() const { return flat.data(); }
    float* data() { return flat.data(); }
    size_t size() const { return flat.size(); }

    int d() const { return layout.fc.d; }
    int c1() const { return layout.fc.c1; }
    int c2() const { return layout.fc.c2; }

    std::span<const float> entity_base(int e) const {
        return {flat.data() + layout.entity_base + static_cast<size_t>(e) * d(), static_cast<size_t>(d())};
    }
    std::span<const float> item_base(int t) const {
        return {flat.data() + layout.item_base + static_cast<size_t>(t) * d(), static_cast<size_t>(d())};
    }
    std::span<const float> ent_proto(int c) const {
        return {flat.data() + layout.ent_proto + static_cast<size_t>(c) * d(), static_cast<size_t>(d())};
    }
    std::span<const float> itm_proto(int c) const {
        return {flat.data() + layout.itm_proto + static_cast<size_t>(c) * d(), static_cast<size_t>(d())};
    }
    // D x D row-major matrices
    const float* ent_map_mu() const { return flat.data() + layout.ent_map_mu; }
    const float* ent_map_logsig() const { return flat.data() + layout.ent_map_logsig; }
    const float* itm_map_mu() const { return flat.data() + layout.itm_map_mu; }
    const float* itm_map_logsig() const { return flat.data() + layout.itm_map_logsig; }

    // Decoder-side item vectors: dictionary tables by default, encoder-side
    // values when tied.
    std::span<const float> dict_base(int t) const {
        if (layout.tied) return item_base(t);
        return {flat.data() + layout.dict_base + static_cast<size_t>(t) * d(), static_cast<size_t>(d())};
    }
    std::span<const float> dict_ent(int t, int c) const {
        if (layout.tied) throw std::logic_error("dict_ent: tied mode uses encoder means");
        return {flat.data() + layout.dict_ent + (static_cast<size_t>(t) * c1() + c) * d(),
                static_cast<size_t>(d())};
    }
};

// i.i.d. normal(0, init_scale) entries everywhere; prototype rows then
// renormalized to unit norm so initial cosines are informative.
ModelParams init_params(const HeteroGraph& graph, const FactorConfig& fc, bool tied,
                        float init_scale, SeededRng& rng);

}  // namespace facrec

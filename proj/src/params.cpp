#include "facrec/params.hpp"

#include <cmath>

namespace facrec {

ParamLayout ParamLayout::make(int n_items, int n_entities, const FactorConfig& fc, bool tied) {
    fc.validate();
    ParamLayout L;
    L.n_items = n_items;
    L.n_entities = n_entities;
    L.fc = fc;
    L.tied = tied;

    const size_t D = static_cast<size_t>(fc.d);
    const size_t T = static_cast<size_t>(n_items);
    const size_t E = static_cast<size_t>(n_entities);
    const size_t C1 = static_cast<size_t>(fc.c1);
    const size_t C2 = static_cast<size_t>(fc.c2);

    size_t off = 0;
    auto add = [&](const std::string& name, std::vector<size_t> shape) {
        size_t n = 1;
        for (size_t s : shape) n *= s;
        L.tensors.push_back({name, off, std::move(shape)});
        size_t at = off;
        off += n;
        return at;
    };
    L.entity_base = add("entity_base", {E, D});
    L.item_base = add("item_base", {T, D});
    L.ent_proto = add("ent_proto", {C1, D});
    L.itm_proto = add("itm_proto", {C2, D});
    L.ent_map_mu = add("ent_map_mu", {D, D});
    L.ent_map_logsig = add("ent_map_logsig", {D, D});
    L.itm_map_mu = add("itm_map_mu", {D, D});
    L.itm_map_logsig = add("itm_map_logsig", {D, D});
    if (!tied) {
        L.dict_base = add("dict_base", {T, D});
        L.dict_ent = add("dict_ent", {T, C1, D});
    }
    L.total = off;
    return L;
}

ModelParams init_params(const HeteroGraph& graph, const FactorConfig& fc, bool tied,
                        float init_scale, SeededRng& rng) {
    ModelParams p;
    p.layout = ParamLayout::make(graph.item_count(), graph.entity_count(), fc, tied);
    p.flat.resize(p.layout.total);
    if (init_scale < 0.0f) throw std::invalid_argument("init_params: init_scale must be >= 0");
    for (float& x : p.flat) x = init_scale * static_cast<float>(rng.normal());

    auto renorm = [&](size_t off, int rows) {
        for (int r = 0; r < rows; ++r) {
            float* v = p.flat.data() + off + static_cast<size_t>(r) * fc.d;
            double n2 = 0.0;
            for (int i = 0; i < fc.d; ++i) n2 += static_cast<double>(v[i]) * v[i];
            const double n = std::sqrt(n2);
            if (n > 1e-12) {
                const float inv = static_cast<float>(1.0 / n);
                for (int i = 0; i < fc.d; ++i) v[i] *= inv;
            } else {
                // degenerate draw (possible when init_scale == 0): pin to a
                // canonical axis so the prototype row keeps nonzero norm
                v[r % fc.d] = 1.0f;
            }
        }
    };
    renorm(p.layout.ent_proto, fc.c1);
    renorm(p.layout.itm_proto, fc.c2);
    return p;
}

}  // namespace facrec

#include "facrec/elbo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace facrec {

namespace {

constexpr double kExpClamp = 50.0;
constexpr double kLogSigClip = 5.0;
constexpr double kNormFloor = 1e-12;

template <typename S>
double dot_sd(const S* a, const float* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename S>
double dot_ss(const S* a, const S* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

// Model state recomputed from the parameter snapshot at S precision:
// affiliations plus per-item segment parameters and activations.
template <typename S>
struct Workspace {
    int c1 = 0, c2 = 0, d = 0;
    std::vector<S> ent_affil;  // [E, C1]
    std::vector<S> itm_affil;  // [T, C2]
    std::vector<S> h;          // [T, C1, D]
    std::vector<S> sig_raw;    // [T, C1, D]
    std::vector<S> mu;         // [T, C1, D]
    std::vector<S> sigma;      // [T, C1, D]

    const S* seg(const std::vector<S>& buf, int t, int c) const {
        return buf.data() + (static_cast<size_t>(t) * c1 + c) * d;
    }
};

// softmax over factor cosines; mirrors the float encoder but at S precision
template <typename S>
void affil_row(const float* base, const float* protos, int count, int d, double gamma, S* out) {
    double nb = 0.0;
    for (int i = 0; i < d; ++i) nb += static_cast<double>(base[i]) * base[i];
    nb = std::sqrt(nb);
    double mx = -1e300;
    std::vector<double> logits(count);
    for (int c = 0; c < count; ++c) {
        const float* p = protos + static_cast<size_t>(c) * d;
        double dp = 0.0, np = 0.0;
        for (int i = 0; i < d; ++i) {
            dp += static_cast<double>(base[i]) * p[i];
            np += static_cast<double>(p[i]) * p[i];
        }
        np = std::sqrt(np);
        logits[c] = (nb < kNormFloor || np < kNormFloor) ? 0.0 : dp / (nb * np);
        mx = std::max(mx, logits[c]);
    }
    double sum = 0.0;
    for (int c = 0; c < count; ++c) {
        logits[c] = std::exp((logits[c] - mx) / gamma);
        sum += logits[c];
    }
    for (int c = 0; c < count; ++c) out[c] = static_cast<S>(logits[c] / sum);
}

template <typename S>
Workspace<S> build_workspace(const HeteroGraph& g, const ModelParams& p) {
    const int d = p.d(), c1 = p.c1(), c2 = p.c2();
    const int T = g.item_count(), E = g.entity_count();
    const double gamma = p.layout.fc.gamma;

    Workspace<S> ws;
    ws.c1 = c1;
    ws.c2 = c2;
    ws.d = d;
    ws.ent_affil.resize(static_cast<size_t>(E) * c1);
    ws.itm_affil.resize(static_cast<size_t>(T) * c2);
    const size_t segn = static_cast<size_t>(T) * c1 * d;
    ws.h.resize(segn);
    ws.sig_raw.resize(segn);
    ws.mu.resize(segn);
    ws.sigma.resize(segn);

    const float* ent_protos = p.flat.data() + p.layout.ent_proto;
    const float* itm_protos = p.flat.data() + p.layout.itm_proto;

#pragma omp parallel for schedule(static)
    for (int e = 0; e < E; ++e)
        affil_row(p.entity_base(e).data(), ent_protos, c1, d, gamma,
                  ws.ent_affil.data() + static_cast<size_t>(e) * c1);

#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
        affil_row(p.item_base(t).data(), itm_protos, c2, d, gamma,
                  ws.itm_affil.data() + static_cast<size_t>(t) * c2);
        const size_t base = static_cast<size_t>(t) * c1 * d;
        const auto& nbrs = g.item_entities[t];
        if (nbrs.empty()) {
            for (int c = 0; c < c1; ++c)
                for (int i = 0; i < d; ++i) {
                    ws.h[base + static_cast<size_t>(c) * d + i] = S(0);
                    ws.sig_raw[base + static_cast<size_t>(c) * d + i] = S(0);
                    ws.mu[base + static_cast<size_t>(c) * d + i] = S(0);
                    ws.sigma[base + static_cast<size_t>(c) * d + i] = S(1);
                }
            continue;
        }
        std::vector<S> agg(static_cast<size_t>(c1) * d, S(0));
        const S inv_n = S(1) / static_cast<S>(nbrs.size());
        for (int e : nbrs) {
            const S* pe = ws.ent_affil.data() + static_cast<size_t>(e) * c1;
            const auto z = p.entity_base(e);
            for (int c = 0; c < c1; ++c) {
                const S w = pe[c] * inv_n;
                S* a = agg.data() + static_cast<size_t>(c) * d;
                for (int i = 0; i < d; ++i) a[i] += w * static_cast<S>(z[i]);
            }
        }
        for (int c = 0; c < c1; ++c) {
            const S* a = agg.data() + static_cast<size_t>(c) * d;
            S* hrow = ws.h.data() + base + static_cast<size_t>(c) * d;
            for (int i = 0; i < d; ++i) hrow[i] = std::tanh(a[i]);
            S* murow = ws.mu.data() + base + static_cast<size_t>(c) * d;
            S* srrow = ws.sig_raw.data() + base + static_cast<size_t>(c) * d;
            S* sgrow = ws.sigma.data() + base + static_cast<size_t>(c) * d;
            const float* wmu = p.ent_map_mu();
            const float* wsg = p.ent_map_logsig();
            for (int i = 0; i < d; ++i) {
                double am = 0.0, as = 0.0;
                const float* rm = wmu + static_cast<size_t>(i) * d;
                const float* rs = wsg + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) {
                    am += static_cast<double>(rm[j]) * static_cast<double>(hrow[j]);
                    as += static_cast<double>(rs[j]) * static_cast<double>(hrow[j]);
                }
                murow[i] = static_cast<S>(am);
                srrow[i] = static_cast<S>(as);
                sgrow[i] = static_cast<S>(std::exp(std::clamp(as, -kLogSigClip, kLogSigClip)));
            }
        }
    }
    return ws;
}

// Gradient buffer layout: parameter gradients followed by the deferred
// per-node accumulators consumed by the item/entity passes.
struct AuxLayout {
    size_t params = 0;
    size_t gp_item = 0;  // [T, C2] dL/dp(t, c)
    size_t gp_ent = 0;   // [E, C1] dL/dp(e, c)
    size_t g_mu = 0;     // [T, C1, D] dL/dmu_seg
    size_t g_sig = 0;    // [T, C1, D] dL/dsigma_seg
    size_t total = 0;

    static AuxLayout make(size_t p, int T, int E, int c1, int c2, int d) {
        AuxLayout a;
        a.params = p;
        a.gp_item = p;
        a.gp_ent = a.gp_item + static_cast<size_t>(T) * c2;
        a.g_mu = a.gp_ent + static_cast<size_t>(E) * c1;
        a.g_sig = a.g_mu + static_cast<size_t>(T) * c1 * d;
        a.total = a.g_sig + static_cast<size_t>(T) * c1 * d;
        return a;
    }
};

// Per-user encoding at S precision (aggregates, activations, segments).
template <typename S>
struct UserState {
    std::vector<S> b, hb, mu_i, sraw_i, sig_i;  // [C2, D]
    std::vector<S> mu_eu, sig_eu;               // [C1, D]

    void resize(int c1, int c2, int d) {
        b.assign(static_cast<size_t>(c2) * d, S(0));
        hb.resize(static_cast<size_t>(c2) * d);
        mu_i.resize(static_cast<size_t>(c2) * d);
        sraw_i.resize(static_cast<size_t>(c2) * d);
        sig_i.resize(static_cast<size_t>(c2) * d);
        mu_eu.assign(static_cast<size_t>(c1) * d, S(0));
        sig_eu.assign(static_cast<size_t>(c1) * d, S(0));
    }
};

template <typename S>
void encode_user_state(const ModelParams& p, const Workspace<S>& ws, std::span<const int> nbrs,
                       UserState<S>& st) {
    const int d = ws.d, c1 = ws.c1, c2 = ws.c2;
    st.resize(c1, c2, d);
    if (nbrs.empty()) {
        // prior fallback: itm segments mu=0 sigma=1 via no mapping
        for (int c = 0; c < c2; ++c)
            for (int i = 0; i < d; ++i) {
                st.hb[static_cast<size_t>(c) * d + i] = S(0);
                st.mu_i[static_cast<size_t>(c) * d + i] = S(0);
                st.sraw_i[static_cast<size_t>(c) * d + i] = S(0);
                st.sig_i[static_cast<size_t>(c) * d + i] = S(1);
            }
        for (int c = 0; c < c1; ++c)
            for (int i = 0; i < d; ++i) {
                st.mu_eu[static_cast<size_t>(c) * d + i] = S(0);
                st.sig_eu[static_cast<size_t>(c) * d + i] = S(1);
            }
        return;
    }
    const S inv_n = S(1) / static_cast<S>(nbrs.size());
    for (int t : nbrs) {
        const S* pt = ws.itm_affil.data() + static_cast<size_t>(t) * c2;
        const auto z = p.item_base(t);
        for (int c = 0; c < c2; ++c) {
            const S w = pt[c] * inv_n;
            S* a = st.b.data() + static_cast<size_t>(c) * d;
            for (int i = 0; i < d; ++i) a[i] += w * static_cast<S>(z[i]);
        }
        for (int c = 0; c < c1; ++c) {
            const S* mu = ws.seg(ws.mu, t, c);
            const S* sg = ws.seg(ws.sigma, t, c);
            S* mo = st.mu_eu.data() + static_cast<size_t>(c) * d;
            S* so = st.sig_eu.data() + static_cast<size_t>(c) * d;
            for (int i = 0; i < d; ++i) {
                mo[i] += inv_n * mu[i];
                so[i] += inv_n * sg[i];
            }
        }
    }
    const float* wmu = p.itm_map_mu();
    const float* wsg = p.itm_map_logsig();
    for (int c = 0; c < c2; ++c) {
        S* hb = st.hb.data() + static_cast<size_t>(c) * d;
        const S* b = st.b.data() + static_cast<size_t>(c) * d;
        for (int i = 0; i < d; ++i) hb[i] = std::tanh(b[i]);
        S* mu = st.mu_i.data() + static_cast<size_t>(c) * d;
        S* sr = st.sraw_i.data() + static_cast<size_t>(c) * d;
        S* sg = st.sig_i.data() + static_cast<size_t>(c) * d;
        for (int i = 0; i < d; ++i) {
            double am = 0.0, as = 0.0;
            const float* rm = wmu + static_cast<size_t>(i) * d;
            const float* rs = wsg + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                am += static_cast<double>(rm[j]) * static_cast<double>(hb[j]);
                as += static_cast<double>(rs[j]) * static_cast<double>(hb[j]);
            }
            mu[i] = static_cast<S>(am);
            sr[i] = static_cast<S>(as);
            sg[i] = static_cast<S>(std::exp(std::clamp(as, -kLogSigClip, kLogSigClip)));
        }
    }
}

template <typename S>
double kl_of(const S* mu, const S* sigma, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double m = mu[i], s = sigma[i];
        acc += 0.5 * (m * m + s * s - 1.0 - 2.0 * std::log(s));
    }
    return acc < 0.0 ? 0.0 : acc;
}

// Scratch reused across users within one thread.
template <typename S>
struct ThreadScratch {
    UserState<S> full, pair_state;
    std::vector<S> eps_i, eps_e;          // [C2, D], [C1, D]
    std::vector<S> zi, ze;                // realized segments
    std::vector<S> e1, e2, x1, x2;        // per candidate per factor
    std::vector<double> score;            // per candidate
    std::vector<char> pos_mask;           // [T]
    std::vector<int> candidates;
    std::vector<S> g_mu_i, g_sig_i, g_mu_eu, g_sig_eu;
    std::vector<S> g_zi, g_ze;
    std::vector<S> tmp;                   // [D]
};

// Backward from accumulated segment gradients through the user-side maps
// and aggregates into the chunk gradient buffer.
template <typename S>
void backward_user_segments(const ModelParams& p, const Workspace<S>& ws,
                            std::span<const int> nbrs, const UserState<S>& st,
                            ThreadScratch<S>& sc, S* G, const AuxLayout& aux) {
    const int d = ws.d, c1 = ws.c1, c2 = ws.c2;
    if (nbrs.empty()) return;  // prior fallback carries no gradient
    const ParamLayout& L = p.layout;
    const S inv_n = S(1) / static_cast<S>(nbrs.size());

    for (int c = 0; c < c2; ++c) {
        const S* gmu = sc.g_mu_i.data() + static_cast<size_t>(c) * d;
        const S* gsg = sc.g_sig_i.data() + static_cast<size_t>(c) * d;
        const S* hb = st.hb.data() + static_cast<size_t>(c) * d;
        const S* sr = st.sraw_i.data() + static_cast<size_t>(c) * d;
        const S* sg = st.sig_i.data() + static_cast<size_t>(c) * d;
        // graw = gsg * sigma inside the active clip range
        S* graw = sc.tmp.data();
        for (int i = 0; i < d; ++i) {
            const bool active = sr[i] > S(-kLogSigClip) && sr[i] < S(kLogSigClip);
            graw[i] = active ? gsg[i] * sg[i] : S(0);
        }
        // map weights and hb gradient
        std::vector<S> ghb(d, S(0));
        const float* wmu = p.itm_map_mu();
        const float* wsr = p.itm_map_logsig();
        for (int i = 0; i < d; ++i) {
            S* gm_row = G + L.itm_map_mu + static_cast<size_t>(i) * d;
            S* gs_row = G + L.itm_map_logsig + static_cast<size_t>(i) * d;
            const float* wm_row = wmu + static_cast<size_t>(i) * d;
            const float* ws_row = wsr + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                gm_row[j] += gmu[i] * hb[j];
                gs_row[j] += graw[i] * hb[j];
                ghb[j] += gmu[i] * static_cast<S>(wm_row[j]) + graw[i] * static_cast<S>(ws_row[j]);
            }
        }
        // through tanh into the aggregate
        for (int i = 0; i < d; ++i) ghb[i] *= (S(1) - hb[i] * hb[i]);
        for (int t : nbrs) {
            const S* pt = ws.itm_affil.data() + static_cast<size_t>(t) * c2;
            const auto z = p.item_base(t);
            double gp = 0.0;
            S* gz = G + L.item_base + static_cast<size_t>(t) * d;
            const S w = pt[c] * inv_n;
            for (int i = 0; i < d; ++i) {
                gp += static_cast<double>(ghb[i]) * static_cast<double>(z[i]);
                gz[i] += w * ghb[i];
            }
            G[aux.gp_item + static_cast<size_t>(t) * c2 + c] += static_cast<S>(gp) * inv_n;
        }
    }
    for (int c = 0; c < c1; ++c) {
        const S* gmu = sc.g_mu_eu.data() + static_cast<size_t>(c) * d;
        const S* gsg = sc.g_sig_eu.data() + static_cast<size_t>(c) * d;
        for (int t : nbrs) {
            S* gm = G + aux.g_mu + (static_cast<size_t>(t) * c1 + c) * d;
            S* gs = G + aux.g_sig + (static_cast<size_t>(t) * c1 + c) * d;
            for (int i = 0; i < d; ++i) {
                gm[i] += inv_n * gmu[i];
                gs[i] += inv_n * gsg[i];
            }
        }
    }
}

// Scores candidates for one realized representation, then (optionally)
// pushes the likelihood gradient into G. Returns the pair/user nll term.
template <typename S>
double score_and_backprop(const ModelParams& p, const Workspace<S>& ws, ThreadScratch<S>& sc,
                          const std::vector<int>& cands, int n_pos, double weight, S* G,
                          const AuxLayout& aux) {
    const int d = ws.d, c1 = ws.c1, c2 = ws.c2;
    const ParamLayout& L = p.layout;
    const size_t nc = cands.size();
    sc.e1.resize(nc * c2);
    sc.x1.resize(nc * c2);
    sc.e2.resize(nc * c1);
    sc.x2.resize(nc * c1);
    sc.score.resize(nc);

    double z_sum = 0.0;
    double pos_log = 0.0;
    for (size_t k = 0; k < nc; ++k) {
        const int t = cands[k];
        const S* pt = ws.itm_affil.data() + static_cast<size_t>(t) * c2;
        double s_t = 0.0;
        for (int c = 0; c < c2; ++c) {
            const double x =
                p.layout.tied
                    ? dot_sd(sc.zi.data() + static_cast<size_t>(c) * d, p.item_base(t).data(), d)
                    : dot_sd(sc.zi.data() + static_cast<size_t>(c) * d, p.dict_base(t).data(), d);
            sc.x1[k * c2 + c] = static_cast<S>(x);
            const double e = std::exp(std::min(x, kExpClamp));
            sc.e1[k * c2 + c] = static_cast<S>(e);
            s_t += static_cast<double>(pt[c]) * e;
        }
        for (int c = 0; c < c1; ++c) {
            double x;
            if (L.tied)
                x = dot_ss(sc.ze.data() + static_cast<size_t>(c) * d, ws.seg(ws.mu, t, c), d);
            else
                x = dot_sd(sc.ze.data() + static_cast<size_t>(c) * d, p.dict_ent(t, c).data(), d);
            sc.x2[k * c1 + c] = static_cast<S>(x);
            const double e = std::exp(std::min(x, kExpClamp));
            sc.e2[k * c1 + c] = static_cast<S>(e);
            s_t += e;
        }
        sc.score[k] = s_t;
        z_sum += s_t;
        if (sc.pos_mask[t]) pos_log += std::log(s_t);
    }
    const double nll = -(pos_log - static_cast<double>(n_pos) * std::log(z_sum));

    if (G != nullptr) {
        std::fill(sc.g_zi.begin(), sc.g_zi.end(), S(0));
        std::fill(sc.g_ze.begin(), sc.g_ze.end(), S(0));
        for (size_t k = 0; k < nc; ++k) {
            const int t = cands[k];
            const S* pt = ws.itm_affil.data() + static_cast<size_t>(t) * c2;
            const double beta =
                static_cast<double>(n_pos) * sc.score[k] / z_sum - (sc.pos_mask[t] ? 1.0 : 0.0);
            const double f = weight * beta / sc.score[k];
            for (int c = 0; c < c2; ++c) {
                const double e1 = sc.e1[k * c2 + c];
                const double gx1 =
                    (static_cast<double>(sc.x1[k * c2 + c]) < kExpClamp) ? f * pt[c] * e1 : 0.0;
                G[aux.gp_item + static_cast<size_t>(t) * c2 + c] += static_cast<S>(f * e1);
                if (gx1 != 0.0) {
                    const S gx = static_cast<S>(gx1);
                    const S* zi = sc.zi.data() + static_cast<size_t>(c) * d;
                    S* gd = L.tied ? G + L.item_base + static_cast<size_t>(t) * d
                                   : G + L.dict_base + static_cast<size_t>(t) * d;
                    const float* dv = L.tied ? p.item_base(t).data() : p.dict_base(t).data();
                    S* gz = sc.g_zi.data() + static_cast<size_t>(c) * d;
                    for (int i = 0; i < d; ++i) {
                        gd[i] += gx * zi[i];
                        gz[i] += gx * static_cast<S>(dv[i]);
                    }
                }
            }
            for (int c = 0; c < c1; ++c) {
                const double gx2 =
                    (static_cast<double>(sc.x2[k * c1 + c]) < kExpClamp) ? f * sc.e2[k * c1 + c] : 0.0;
                if (gx2 == 0.0) continue;
                const S gx = static_cast<S>(gx2);
                const S* ze = sc.ze.data() + static_cast<size_t>(c) * d;
                S* gz = sc.g_ze.data() + static_cast<size_t>(c) * d;
                if (L.tied) {
                    S* gd = G + aux.g_mu + (static_cast<size_t>(t) * c1 + c) * d;
                    const S* dv = ws.seg(ws.mu, t, c);
                    for (int i = 0; i < d; ++i) {
                        gd[i] += gx * ze[i];
                        gz[i] += gx * dv[i];
                    }
                } else {
                    S* gd = G + L.dict_ent + (static_cast<size_t>(t) * c1 + c) * d;
                    const float* dv = p.dict_ent(t, c).data();
                    for (int i = 0; i < d; ++i) {
                        gd[i] += gx * ze[i];
                        gz[i] += gx * static_cast<S>(dv[i]);
                    }
                }
            }
        }
    }
    return nll;
}

// softmax(cos/gamma) backward for one node against its prototype bank
template <typename S>
void affiliation_backward(const float* base, const float* protos, int count, int d, double gamma,
                          const S* p_row, const S* gp, S* g_base, S* g_protos) {
    double dot_gp = 0.0;
    for (int c = 0; c < count; ++c) dot_gp += static_cast<double>(gp[c]) * static_cast<double>(p_row[c]);
    double nb2 = 0.0;
    for (int i = 0; i < d; ++i) nb2 += static_cast<double>(base[i]) * base[i];
    const double nb = std::sqrt(nb2);
    for (int c = 0; c < count; ++c) {
        const double gr = (static_cast<double>(gp[c]) - dot_gp) * static_cast<double>(p_row[c]) / gamma;
        if (gr == 0.0) continue;
        const float* pr = protos + static_cast<size_t>(c) * d;
        double np2 = 0.0, dp = 0.0;
        for (int i = 0; i < d; ++i) {
            np2 += static_cast<double>(pr[i]) * pr[i];
            dp += static_cast<double>(base[i]) * pr[i];
        }
        const double np = std::sqrt(np2);
        if (nb < kNormFloor || np < kNormFloor) continue;  // cosine guard: constant 0
        const double cosv = dp / (nb * np);
        const double inv = 1.0 / (nb * np);
        S* gpr = g_protos + static_cast<size_t>(c) * d;
        for (int i = 0; i < d; ++i) {
            g_base[i] += static_cast<S>(gr * (pr[i] * inv - cosv * base[i] / nb2));
            gpr[i] += static_cast<S>(gr * (base[i] * inv - cosv * pr[i] / np2));
        }
    }
}

template <typename S>
void reduce_into(std::vector<S>& master, const std::vector<std::vector<S>>& chunks) {
    for (const auto& c : chunks) {
        S* m = master.data();
        const S* s = c.data();
        const size_t n = master.size();
        for (size_t i = 0; i < n; ++i) m[i] += s[i];
    }
}

}  // namespace

template <typename S>
LossBreakdown elbo_batch_grad(const HeteroGraph& graph, const ModelParams& params,
                              const TrainConfig& cfg, std::span<const int> users,
                              uint64_t noise_key, std::vector<S>* grad_out) {
    cfg.validate();
    if (users.empty()) throw std::invalid_argument("elbo: empty user batch");
    const int T = graph.item_count();
    const int E = graph.entity_count();
    const int d = params.d(), c1 = params.c1(), c2 = params.c2();
    for (int u : users)
        if (graph.user_items[u].empty())
            throw std::runtime_error("elbo: user " + std::to_string(u) +
                                     " has no training interactions");

    const Workspace<S> ws = build_workspace<S>(graph, params);
    const size_t P = params.size();
    const AuxLayout aux = AuxLayout::make(P, T, E, c1, c2, d);

    const int B = static_cast<int>(users.size());
    const int K = std::min(cfg.grad_chunks, B);
    const int per_chunk = (B + K - 1) / K;
    const bool need_grad = grad_out != nullptr;

    std::vector<std::vector<S>> chunk_buf;
    if (need_grad) {
        chunk_buf.assign(K, {});
        for (auto& b : chunk_buf) b.assign(aux.total, S(0));
    }
    std::vector<double> chunk_nll(K, 0.0), chunk_kl(K, 0.0);

#pragma omp parallel
    {
        ThreadScratch<S> sc;
        sc.pos_mask.assign(T, 0);
        sc.eps_i.resize(static_cast<size_t>(c2) * d);
        sc.eps_e.resize(static_cast<size_t>(c1) * d);
        sc.zi.resize(static_cast<size_t>(c2) * d);
        sc.ze.resize(static_cast<size_t>(c1) * d);
        sc.g_zi.resize(static_cast<size_t>(c2) * d);
        sc.g_ze.resize(static_cast<size_t>(c1) * d);
        sc.g_mu_i.resize(static_cast<size_t>(c2) * d);
        sc.g_sig_i.resize(static_cast<size_t>(c2) * d);
        sc.g_mu_eu.resize(static_cast<size_t>(c1) * d);
        sc.g_sig_eu.resize(static_cast<size_t>(c1) * d);
        sc.tmp.resize(d);

#pragma omp for schedule(static)
        for (int k = 0; k < K; ++k) {
            S* G = need_grad ? chunk_buf[k].data() : nullptr;
            const int lo = k * per_chunk;
            const int hi = std::min(B, lo + per_chunk);
            for (int bi = lo; bi < hi; ++bi) {
                const int u = users[bi];
                const auto& nbrs = graph.user_items[u];
                const int n_pos = static_cast<int>(nbrs.size());

                // candidate set: all items, or positives plus sampled negatives
                sc.candidates.clear();
                if (cfg.softmax_samples <= 0) {
                    sc.candidates.resize(T);
                    for (int t = 0; t < T; ++t) sc.candidates[t] = t;
                } else {
                    sc.candidates = nbrs;
                    SeededRng neg_rng = user_negative_rng(noise_key, u);
                    const int avail = T - n_pos;
                    const int want = std::min(cfg.softmax_samples, avail);
                    std::vector<char> drawn(T, 0);
                    int got = 0;
                    while (got < want) {
                        const int t = static_cast<int>(neg_rng.uniform_int(T));
                        if (drawn[t]) continue;
                        bool is_pos = std::binary_search(nbrs.begin(), nbrs.end(), t);
                        drawn[t] = 1;
                        if (is_pos) continue;
                        sc.candidates.push_back(t);
                        ++got;
                    }
                }
                for (int t : nbrs) sc.pos_mask[t] = 1;

                encode_user_state(params, ws, nbrs, sc.full);

                // KL on the user's segments (computed once per user)
                double kl_u = 0.0;
                for (int c = 0; c < c2; ++c)
                    kl_u += kl_of(sc.full.mu_i.data() + static_cast<size_t>(c) * d,
                                  sc.full.sig_i.data() + static_cast<size_t>(c) * d, d);
                for (int c = 0; c < c1; ++c)
                    kl_u += kl_of(sc.full.mu_eu.data() + static_cast<size_t>(c) * d,
                                  sc.full.sig_eu.data() + static_cast<size_t>(c) * d, d);
                if (params.layout.tied) {
                    for (int t : nbrs) kl_u += kl_of(ws.seg(ws.mu, t, 0), ws.seg(ws.sigma, t, 0),
                                                     c1 * d);
                }
                chunk_kl[k] += kl_u;

                std::fill(sc.g_mu_i.begin(), sc.g_mu_i.end(), S(0));
                std::fill(sc.g_sig_i.begin(), sc.g_sig_i.end(), S(0));
                std::fill(sc.g_mu_eu.begin(), sc.g_mu_eu.end(), S(0));
                std::fill(sc.g_sig_eu.begin(), sc.g_sig_eu.end(), S(0));
                if (need_grad) {
                    for (int c = 0; c < c2; ++c)
                        for (int i = 0; i < d; ++i) {
                            const size_t ix = static_cast<size_t>(c) * d + i;
                            sc.g_mu_i[ix] += sc.full.mu_i[ix];
                            const S sg = sc.full.sig_i[ix];
                            sc.g_sig_i[ix] += sg - S(1) / sg;
                        }
                    for (int c = 0; c < c1; ++c)
                        for (int i = 0; i < d; ++i) {
                            const size_t ix = static_cast<size_t>(c) * d + i;
                            sc.g_mu_eu[ix] += sc.full.mu_eu[ix];
                            const S sg = sc.full.sig_eu[ix];
                            sc.g_sig_eu[ix] += sg - S(1) / sg;
                        }
                    if (params.layout.tied) {
                        S* G2 = chunk_buf[k].data();
                        for (int t : nbrs)
                            for (int c = 0; c < c1; ++c) {
                                const S* mu = ws.seg(ws.mu, t, c);
                                const S* sg = ws.seg(ws.sigma, t, c);
                                S* gm = G2 + aux.g_mu + (static_cast<size_t>(t) * c1 + c) * d;
                                S* gs = G2 + aux.g_sig + (static_cast<size_t>(t) * c1 + c) * d;
                                for (int i = 0; i < d; ++i) {
                                    gm[i] += mu[i];
                                    gs[i] += sg[i] - S(1) / sg[i];
                                }
                            }
                    }
                }

                // Monte Carlo reconstruction term
                SeededRng eps_rng = user_noise_rng(noise_key, u);
                const double w_mc = 1.0 / cfg.mc_samples;
                double nll_u = 0.0;
                for (int s = 0; s < cfg.mc_samples; ++s) {
                    for (auto& v : sc.eps_i) v = static_cast<S>(eps_rng.normal());
                    for (auto& v : sc.eps_e) v = static_cast<S>(eps_rng.normal());

                    if (!cfg.exclude_target_from_neighborhood) {
                        for (size_t i = 0; i < sc.zi.size(); ++i)
                            sc.zi[i] = sc.full.mu_i[i] + sc.full.sig_i[i] * sc.eps_i[i];
                        for (size_t i = 0; i < sc.ze.size(); ++i)
                            sc.ze[i] = sc.full.mu_eu[i] + sc.full.sig_eu[i] * sc.eps_e[i];
                        const double nll = score_and_backprop(params, ws, sc, sc.candidates,
                                                              n_pos, w_mc, G, aux);
                        nll_u += w_mc * nll;
                        if (need_grad) {
                            for (size_t i = 0; i < sc.zi.size(); ++i) {
                                sc.g_mu_i[i] += sc.g_zi[i];
                                sc.g_sig_i[i] += sc.g_zi[i] * sc.eps_i[i];
                            }
                            for (size_t i = 0; i < sc.ze.size(); ++i) {
                                sc.g_mu_eu[i] += sc.g_ze[i];
                                sc.g_sig_eu[i] += sc.g_ze[i] * sc.eps_e[i];
                            }
                        }
                    } else {
                        // per-positive encodings that exclude the target edge
                        std::vector<int> sub;
                        sub.reserve(nbrs.size());
                        for (int target : nbrs) {
                            sub.clear();
                            for (int t : nbrs)
                                if (t != target) sub.push_back(t);
                            encode_user_state(params, ws, sub, sc.pair_state);
                            for (size_t i = 0; i < sc.zi.size(); ++i)
                                sc.zi[i] = sc.pair_state.mu_i[i] + sc.pair_state.sig_i[i] * sc.eps_i[i];
                            for (size_t i = 0; i < sc.ze.size(); ++i)
                                sc.ze[i] = sc.pair_state.mu_eu[i] + sc.pair_state.sig_eu[i] * sc.eps_e[i];
                            // single-positive mask for this pair
                            for (int t : nbrs) sc.pos_mask[t] = 0;
                            sc.pos_mask[target] = 1;
                            const double nll = score_and_backprop(params, ws, sc,
                                                                  sc.candidates, 1, w_mc, G, aux);
                            nll_u += w_mc * nll;
                            for (int t : nbrs) sc.pos_mask[t] = 1;
                            if (need_grad) {
                                // pair encoding has its own aggregate backward
                                std::vector<S> sm_i(sc.g_mu_i.size(), S(0)), ss_i(sc.g_sig_i.size(), S(0));
                                std::vector<S> sm_e(sc.g_mu_eu.size(), S(0)), ss_e(sc.g_sig_eu.size(), S(0));
                                for (size_t i = 0; i < sc.zi.size(); ++i) {
                                    sm_i[i] = sc.g_zi[i];
                                    ss_i[i] = sc.g_zi[i] * sc.eps_i[i];
                                }
                                for (size_t i = 0; i < sc.ze.size(); ++i) {
                                    sm_e[i] = sc.g_ze[i];
                                    ss_e[i] = sc.g_ze[i] * sc.eps_e[i];
                                }
                                std::swap(sm_i, sc.g_mu_i);
                                std::swap(ss_i, sc.g_sig_i);
                                std::swap(sm_e, sc.g_mu_eu);
                                std::swap(ss_e, sc.g_sig_eu);
                                backward_user_segments(params, ws, sub, sc.pair_state, sc, G, aux);
                                std::swap(sm_i, sc.g_mu_i);
                                std::swap(ss_i, sc.g_sig_i);
                                std::swap(sm_e, sc.g_mu_eu);
                                std::swap(ss_e, sc.g_sig_eu);
                            }
                        }
                    }
                }
                chunk_nll[k] += nll_u;

                // full-encoding backward (KL always; plus the sampling routes
                // unless the exclude switch already consumed them per pair)
                if (need_grad) backward_user_segments(params, ws, nbrs, sc.full, sc, G, aux);

                for (int t : nbrs) sc.pos_mask[t] = 0;
            }
        }
    }

    LossBreakdown loss;
    for (int k = 0; k < K; ++k) {
        loss.negative_log_likelihood += chunk_nll[k];
        loss.kl += chunk_kl[k];
    }
    loss.negative_log_likelihood /= B;
    loss.kl /= B;

    // l2 over all parameters, fixed block order
    {
        const size_t block = 65536;
        const size_t nb = (P + block - 1) / block;
        std::vector<double> partial(nb, 0.0);
#pragma omp parallel for schedule(static)
        for (long long bi = 0; bi < static_cast<long long>(nb); ++bi) {
            double acc = 0.0;
            const size_t lo = static_cast<size_t>(bi) * block;
            const size_t hi = std::min(P, lo + block);
            for (size_t i = lo; i < hi; ++i)
                acc += static_cast<double>(params.flat[i]) * params.flat[i];
            partial[bi] = acc;
        }
        for (double v : partial) loss.l2 += v;
    }
    loss.total = loss.negative_log_likelihood + loss.kl + static_cast<double>(cfg.l2_weight) * loss.l2;

    if (!need_grad) return loss;

    // reduce user-phase chunks, then run the deferred item/entity passes
    std::vector<S> master(aux.total, S(0));
    reduce_into(master, chunk_buf);

    const auto zero_chunks = [&]() {
        for (auto& b : chunk_buf) std::fill(b.begin(), b.end(), S(0));
    };

    // item pass: segment backward through the entity-side maps and the
    // affiliation backward into item embeddings and prototypes
    zero_chunks();
    {
        const int ik = K;
        const int per = (T + ik - 1) / ik;
#pragma omp parallel
        {
            std::vector<S> gh(d), ga(d), graw(d);
#pragma omp for schedule(static)
            for (int k = 0; k < ik; ++k) {
                S* G = chunk_buf[k].data();
                const int lo = k * per;
                const int hi = std::min(T, lo + per);
                for (int t = lo; t < hi; ++t) {
                    const auto& nbrs = graph.item_entities[t];
                    // entity-side segment gradients
                    bool any = false;
                    const size_t segoff = static_cast<size_t>(t) * c1 * d;
                    for (size_t i = 0; i < static_cast<size_t>(c1) * d && !any; ++i)
                        any = master[aux.g_mu + segoff + i] != S(0) ||
                              master[aux.g_sig + segoff + i] != S(0);
                    if (any && !nbrs.empty()) {
                        const S inv_n = S(1) / static_cast<S>(nbrs.size());
                        for (int c = 0; c < c1; ++c) {
                            const S* gmu = master.data() + aux.g_mu + segoff + static_cast<size_t>(c) * d;
                            const S* gsg = master.data() + aux.g_sig + segoff + static_cast<size_t>(c) * d;
                            const S* h = ws.seg(ws.h, t, c);
                            const S* sr = ws.seg(ws.sig_raw, t, c);
                            const S* sg = ws.seg(ws.sigma, t, c);
                            for (int i = 0; i < d; ++i) {
                                const bool active = sr[i] > S(-kLogSigClip) && sr[i] < S(kLogSigClip);
                                graw[i] = active ? gsg[i] * sg[i] : S(0);
                            }
                            std::fill(gh.begin(), gh.end(), S(0));
                            const float* wmu = params.ent_map_mu();
                            const float* wsr = params.ent_map_logsig();
                            for (int i = 0; i < d; ++i) {
                                S* gm_row = G + params.layout.ent_map_mu + static_cast<size_t>(i) * d;
                                S* gs_row = G + params.layout.ent_map_logsig + static_cast<size_t>(i) * d;
                                const float* wm_row = wmu + static_cast<size_t>(i) * d;
                                const float* ws_row = wsr + static_cast<size_t>(i) * d;
                                for (int j = 0; j < d; ++j) {
                                    gm_row[j] += gmu[i] * h[j];
                                    gs_row[j] += graw[i] * h[j];
                                    gh[j] += gmu[i] * static_cast<S>(wm_row[j]) +
                                             graw[i] * static_cast<S>(ws_row[j]);
                                }
                            }
                            for (int i = 0; i < d; ++i) ga[i] = gh[i] * (S(1) - h[i] * h[i]);
                            for (int e : nbrs) {
                                const S* pe = ws.ent_affil.data() + static_cast<size_t>(e) * c1;
                                const auto z = params.entity_base(e);
                                double gp = 0.0;
                                S* gz = G + params.layout.entity_base + static_cast<size_t>(e) * d;
                                const S w = pe[c] * inv_n;
                                for (int i = 0; i < d; ++i) {
                                    gp += static_cast<double>(ga[i]) * static_cast<double>(z[i]);
                                    gz[i] += w * ga[i];
                                }
                                G[aux.gp_ent + static_cast<size_t>(e) * c1 + c] +=
                                    static_cast<S>(gp) * inv_n;
                            }
                        }
                    }
                    // affiliation backward
                    const S* gp = master.data() + aux.gp_item + static_cast<size_t>(t) * c2;
                    bool any_gp = false;
                    for (int c = 0; c < c2 && !any_gp; ++c) any_gp = gp[c] != S(0);
                    if (any_gp)
                        affiliation_backward(
                            params.item_base(t).data(), params.flat.data() + params.layout.itm_proto,
                            c2, d, params.layout.fc.gamma,
                            ws.itm_affil.data() + static_cast<size_t>(t) * c2, gp,
                            G + params.layout.item_base + static_cast<size_t>(t) * d,
                            G + params.layout.itm_proto);
                }
            }
        }
        reduce_into(master, chunk_buf);
    }

    // entity pass: affiliation backward into entity embeddings and prototypes
    zero_chunks();
    {
        const int ek = K;
        const int per = (E + ek - 1) / ek;
#pragma omp parallel for schedule(static)
        for (int k = 0; k < ek; ++k) {
            S* G = chunk_buf[k].data();
            const int lo = k * per;
            const int hi = std::min(E, lo + per);
            for (int e = lo; e < hi; ++e) {
                const S* gp = master.data() + aux.gp_ent + static_cast<size_t>(e) * c1;
                bool any = false;
                for (int c = 0; c < c1 && !any; ++c) any = gp[c] != S(0);
                if (!any) continue;
                affiliation_backward(params.entity_base(e).data(),
                                     params.flat.data() + params.layout.ent_proto, c1, d,
                                     params.layout.fc.gamma,
                                     ws.ent_affil.data() + static_cast<size_t>(e) * c1, gp,
                                     G + params.layout.entity_base + static_cast<size_t>(e) * d,
                                     G + params.layout.ent_proto);
            }
        }
        reduce_into(master, chunk_buf);
    }

    // batch average plus l2 gradient
    grad_out->assign(P, S(0));
    const S invB = S(1) / static_cast<S>(B);
    const S l2w = static_cast<S>(2.0 * cfg.l2_weight);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(P); ++i)
        (*grad_out)[i] = master[i] * invB + l2w * static_cast<S>(params.flat[i]);

    return loss;
}

template LossBreakdown elbo_batch_grad<float>(const HeteroGraph&, const ModelParams&,
                                              const TrainConfig&, std::span<const int>, uint64_t,
                                              std::vector<float>*);
template LossBreakdown elbo_batch_grad<double>(const HeteroGraph&, const ModelParams&,
                                               const TrainConfig&, std::span<const int>, uint64_t,
                                               std::vector<double>*);

LossBreakdown elbo_loss(const HeteroGraph& graph, const ModelParams& params, const TrainConfig& cfg,
                        std::span<const int> users, uint64_t noise_key) {
    return elbo_batch_grad<float>(graph, params, cfg, users, noise_key, nullptr);
}

}  // namespace facrec

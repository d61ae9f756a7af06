#pragma once

#include <span>
#include <vector>

#include "facrec/encoder.hpp"
#include "facrec/params.hpp"

namespace facrec {

// Exponent arguments are clamped here before exp to keep early-training
// scores finite.
constexpr double kScoreExpClamp = 50.0;

struct ScoreBreakdown {
    std::vector<double> item_terms;  // C2 entries, p(t,c) * exp(<itm_c(u), d_slf_t>)
    std::vector<double> ent_terms;   // C1 entries, exp(<ent_c(u), d_ent_{t,c}>)
    double total = 0.0;
};

// S(u, t) over factors. affil is p(t, .) from item_affiliation on the
// encoder base embedding. In tied mode decoder entity segments come from
// the encoder means, so a cache is required.
ScoreBreakdown score_pair_breakdown(const UserRepresentation& u_rep, int t,
                                    const ModelParams& params, std::span<const float> affil,
                                    const ItemCache* cache = nullptr);

double score_pair(const UserRepresentation& u_rep, int t, const ModelParams& params,
                  std::span<const float> affil, const ItemCache* cache = nullptr);

// Multinomial log-likelihood of the positives under score normalization
// over the candidate set. positives must be a subset of candidates.
double log_likelihood(const UserRepresentation& u_rep, const std::vector<int>& positives,
                      const std::vector<int>& candidates, const ModelParams& params,
                      const ItemCache* cache = nullptr);

}  // namespace facrec

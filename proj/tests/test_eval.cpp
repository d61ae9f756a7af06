#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "facrec/eval.hpp"
#include "facrec/reference.hpp"
#include "support/synth.hpp"

using namespace facrec;

namespace {

FactorConfig fc(int c1, int c2, int d) {
    FactorConfig f;
    f.c1 = c1;
    f.c2 = c2;
    f.d = d;
    f.gamma = 0.1f;
    return f;
}

// independent oracle: walk the ranking once, collect hit positions, apply
// the formulas directly
double oracle_recall(const std::vector<int>& ranked, const std::unordered_set<int>& truth, int k) {
    int hits = 0;
    for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i)
        hits += truth.count(ranked[i]) ? 1 : 0;
    return static_cast<double>(hits) / truth.size();
}

double oracle_ndcg(const std::vector<int>& ranked, const std::unordered_set<int>& truth, int k) {
    double dcg = 0.0;
    for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i)
        if (truth.count(ranked[i]))
            dcg += (std::pow(2.0, 1.0) - 1.0) / std::log2(i + 2.0);
    double ideal = 0.0;
    const int hits = std::min<int>(k, static_cast<int>(truth.size()));
    for (int i = 0; i < hits; ++i) ideal += 1.0 / std::log2(i + 2.0);
    return dcg / ideal;
}

}  // namespace

TEST_CASE("recall examples") {
    const std::vector<int> ranked{1, 9, 2, 8, 3};
    const std::unordered_set<int> truth{1, 2, 3, 4};
    CHECK(recall_at_k(ranked, truth, 2) == doctest::Approx(0.25));
    CHECK(recall_at_k(ranked, {9, 8}, 5) == doctest::Approx(1.0));
    CHECK(recall_at_k(ranked, {42}, 5) == doctest::Approx(0.0));
    CHECK_THROWS_AS(recall_at_k(ranked, {}, 3), std::invalid_argument);
    CHECK_THROWS_AS(recall_at_k(ranked, truth, 0), std::invalid_argument);
}

TEST_CASE("ndcg examples") {
    // perfect ranking
    CHECK(ndcg_at_k({5, 6, 1, 2}, {5, 6}, 4) == doctest::Approx(1.0).epsilon(1e-12));
    // hits at positions 1 and 3, |truth| = 2, k = 3
    const double expect = (1.0 + 1.0 / std::log2(4.0)) / (1.0 + 1.0 / std::log2(3.0));
    CHECK(ndcg_at_k({7, 0, 8}, {7, 8}, 3) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.9199).epsilon(1e-3));
    // no hits
    CHECK(ndcg_at_k({1, 2, 3}, {9}, 3) == doctest::Approx(0.0));
    CHECK_THROWS_AS(ndcg_at_k({1}, {}, 1), std::invalid_argument);
}

TEST_CASE("metrics agree exactly with the brute-force oracle") {
    SeededRng rng(123);
    for (int it = 0; it < 1000; ++it) {
        const int n = 5 + static_cast<int>(rng.uniform_int(50));
        std::vector<int> ranked(n);
        for (int i = 0; i < n; ++i) ranked[i] = i;
        rng.shuffle(ranked);
        std::unordered_set<int> truth;
        const int tn = 1 + static_cast<int>(rng.uniform_int(8));
        while (static_cast<int>(truth.size()) < tn)
            truth.insert(static_cast<int>(rng.uniform_int(n + 5)));
        const int k = 1 + static_cast<int>(rng.uniform_int(n + 3));
        CHECK(recall_at_k(ranked, truth, k) == oracle_recall(ranked, truth, k));
        CHECK(ndcg_at_k(ranked, truth, k) == oracle_ndcg(ranked, truth, k));
    }
}

TEST_CASE("metric structural properties") {
    SeededRng rng(5);
    for (int it = 0; it < 100; ++it) {
        std::vector<int> ranked(30);
        for (int i = 0; i < 30; ++i) ranked[i] = i;
        rng.shuffle(ranked);
        std::unordered_set<int> truth;
        while (truth.size() < 5) truth.insert(static_cast<int>(rng.uniform_int(30)));

        // recall nondecreasing in k
        double prev = 0.0;
        for (int k = 1; k <= 30; ++k) {
            const double r = recall_at_k(ranked, truth, k);
            CHECK(r >= prev);
            prev = r;
        }

        // ndcg invariant to permutations below position k
        const int k = 10;
        const double before = ndcg_at_k(ranked, truth, k);
        std::vector<int> permuted = ranked;
        std::reverse(permuted.begin() + k, permuted.end());
        CHECK(ndcg_at_k(permuted, truth, k) == before);
    }
}

TEST_CASE("rank_items excludes training items and breaks ties by index") {
    const HeteroGraph g = synth::toy_graph();
    // zero parameters make every score equal
    ModelParams p = synth::random_params(g, fc(2, 2, 3), false, 0.0f, 1);
    std::fill(p.flat.begin(), p.flat.end(), 0.0f);
    const auto ranked = rank_items(0, p, g);  // user 0 trains on items {0, 1}
    CHECK(ranked == std::vector<int>{2, 3});
}

TEST_CASE("rank_items matches brute-force sort and the serial reference") {
    const HeteroGraph g = synth::random_graph(6, 10, 14, 8, 2, 5, 3);
    ModelParams p = synth::random_params(g, fc(3, 2, 4), false, 0.2f, 2);
    const ItemCache cache = build_item_cache(g, p);
    for (int u = 0; u < 5; ++u) {
        const auto ranked = rank_items(u, p, g, &cache);
        // brute force: recompute scores and sort
        const UserRepresentation rep =
            realize(encode_user(u, g, p), RealizeMode::Mean, nullptr);
        std::vector<std::pair<double, int>> scored;
        for (int t = 0; t < g.item_count(); ++t) {
            const auto& tr = g.user_items[u];
            if (std::binary_search(tr.begin(), tr.end(), t)) continue;
            scored.emplace_back(score_pair(rep, t, p, item_affiliation(t, p)), t);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        REQUIRE(ranked.size() == scored.size());
        for (size_t i = 0; i < ranked.size(); ++i) CHECK(ranked[i] == scored[i].second);

        CHECK(ranked == ref::rank_items_serial(u, p, g));
    }
}

TEST_CASE("evaluate means, determinism and skip accounting") {
    const HeteroGraph g = synth::random_graph(8, 30, 25, 10, 3, 8, 3);
    const SplitResult sr = split_holdout(g, 17, 4, 4, 0.8);
    ModelParams p = synth::random_params(sr.train_graph, fc(2, 2, 4), false, 0.2f, 3);

    const std::vector<int> ks{2, 5, 10};
    const MetricsReport a = evaluate(p, sr.train_graph, sr.split, EvalGroup::Test, ks);
    const MetricsReport b = evaluate(p, sr.train_graph, sr.split, EvalGroup::Test, ks);
    CHECK(a.mean_ndcg == b.mean_ndcg);
    CHECK(a.mean_recall == b.mean_recall);
    CHECK(a.users.size() == 4);
    CHECK(a.skipped_empty_truth == 0);

    // a single-user group reports that user's values as the means
    DatasetSplit one = sr.split;
    one.test_users = {sr.split.test_users[0]};
    one.test_truth = {sr.split.test_truth[0]};
    const MetricsReport single = evaluate(p, sr.train_graph, one, EvalGroup::Test, ks);
    for (size_t j = 0; j < ks.size(); ++j) {
        CHECK(single.mean_recall[j] == single.recall_per_user[0][j]);
        CHECK(single.mean_ndcg[j] == single.ndcg_per_user[0][j]);
    }

    // empty-truth users are skipped and counted
    DatasetSplit with_empty = sr.split;
    with_empty.test_truth[1].clear();
    const MetricsReport skipped = evaluate(p, sr.train_graph, with_empty, EvalGroup::Test, ks);
    CHECK(skipped.skipped_empty_truth == 1);
    CHECK(skipped.users.size() == 3);

    DatasetSplit empty = sr.split;
    empty.val_users.clear();
    empty.val_truth.clear();
    CHECK_THROWS_AS(evaluate(p, sr.train_graph, empty, EvalGroup::Val, ks),
                    std::invalid_argument);

    // parallel evaluate agrees with the serial reference
    const MetricsReport serial = ref::evaluate_serial(p, sr.train_graph, sr.split,
                                                      EvalGroup::Test, ks);
    CHECK(a.mean_recall == serial.mean_recall);
    CHECK(a.mean_ndcg == serial.mean_ndcg);
}

TEST_CASE("tied-decoder ranking works with and without a prebuilt cache") {
    const HeteroGraph g = synth::random_graph(7, 8, 12, 8, 2, 4, 3);
    ModelParams p = synth::random_params(g, fc(2, 2, 4), true, 0.2f, 5);
    const ItemCache cache = build_item_cache(g, p);
    for (int u = 0; u < 4; ++u) {
        const auto with_cache = rank_items(u, p, g, &cache);
        const auto without = rank_items(u, p, g);
        CHECK(with_cache == without);
    }
}

TEST_CASE("report serialization formats") {
    const HeteroGraph g = synth::random_graph(9, 20, 15, 8, 3, 6, 3);
    const SplitResult sr = split_holdout(g, 21, 3, 3, 0.8);
    ModelParams p = synth::random_params(sr.train_graph, fc(2, 2, 3), false, 0.2f, 4);
    const MetricsReport rep = evaluate(p, sr.train_graph, sr.split, EvalGroup::Val, {2, 10});

    const std::string tsv = rep.to_tsv();
    CHECK(tsv.find("user\trecall@2\trecall@10\tndcg@2\tndcg@10") == 0);
    CHECK(tsv.find("mean\t") != std::string::npos);

    const std::string text = rep.to_text();
    CHECK(text.find("split=val") == 0);
    CHECK(text.find("recall@10=") != std::string::npos);
    CHECK(text.find("ndcg@10=") != std::string::npos);
}

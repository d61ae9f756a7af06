#include <doctest.h>

#include <cmath>
#include <vector>

#include "facrec/elbo.hpp"
#include "facrec/numerics.hpp"
#include "facrec/reference.hpp"
#include "support/synth.hpp"

using namespace facrec;

namespace {

FactorConfig fc(int c1, int c2, int d, float gamma = 0.1f) {
    FactorConfig f;
    f.c1 = c1;
    f.c2 = c2;
    f.d = d;
    f.gamma = gamma;
    return f;
}

// finite differences against the double instantiation of the kernel
double fd_error(const HeteroGraph& g, ModelParams& p, const TrainConfig& cfg,
                const std::vector<int>& users, uint64_t key) {
    auto loss_fn = [&](std::span<const float> x) {
        ModelParams q;
        q.layout = p.layout;
        q.flat.assign(x.begin(), x.end());
        return elbo_batch_grad<double>(g, q, cfg, users, key, nullptr).total;
    };
    std::vector<double> grad;
    elbo_batch_grad<double>(g, p, cfg, users, key, &grad);
    // h at the small end of the allowed range: the gamma=0.1 affiliation
    // softmax has steep higher derivatives
    return grad_check(loss_fn, p.flat, grad, 1e-5);
}

}  // namespace

TEST_CASE("elbo gradient matches finite differences (untied)") {
    const HeteroGraph g = synth::toy_graph();
    ModelParams p = synth::random_params(g, fc(2, 2, 3), false, 0.2f, 1);
    TrainConfig cfg;
    cfg.fc = p.layout.fc;
    cfg.l2_weight = 1e-3f;
    const std::vector<int> users{0, 1, 2};
    CHECK(fd_error(g, p, cfg, users, 7) < 1e-4);
}

TEST_CASE("elbo gradient matches finite differences (tied decoder)") {
    const HeteroGraph g = synth::toy_graph();
    ModelParams p = synth::random_params(g, fc(2, 2, 3), true, 0.2f, 2);
    TrainConfig cfg;
    cfg.fc = p.layout.fc;
    cfg.decoder_tied = true;
    cfg.l2_weight = 1e-3f;
    const std::vector<int> users{0, 1, 2};
    CHECK(fd_error(g, p, cfg, users, 11) < 1e-4);
}

TEST_CASE("elbo gradient matches finite differences (sampled softmax)") {
    const HeteroGraph g = synth::random_graph(31, 6, 12, 6, 2, 4, 3);
    ModelParams p = synth::random_params(g, fc(2, 2, 3), false, 0.2f, 3);
    TrainConfig cfg;
    cfg.fc = p.layout.fc;
    cfg.softmax_samples = 4;
    // items outside the candidate set carry only l2 gradient; keep it well
    // above finite-difference resolution
    cfg.l2_weight = 1e-3f;
    const std::vector<int> users{0, 2, 4};
    CHECK(fd_error(g, p, cfg, users, 13) < 1e-4);
}

TEST_CASE("elbo gradient matches finite differences (exclude target)") {
    const HeteroGraph g = synth::toy_graph();
    ModelParams p = synth::random_params(g, fc(2, 2, 3), false, 0.2f, 4);
    TrainConfig cfg;
    cfg.fc = p.layout.fc;
    cfg.exclude_target_from_neighborhood = true;
    cfg.l2_weight = 1e-3f;
    const std::vector<int> users{0, 1, 2};
    CHECK(fd_error(g, p, cfg, users, 17) < 1e-4);
}

TEST_CASE("elbo gradient matches finite differences (two MC samples)") {
    const HeteroGraph g = synth::toy_graph();
    ModelParams p = synth::random_params(g, fc(2, 2, 3), false, 0.2f, 5);
    TrainConfig cfg;
    cfg.fc = p.layout.fc;
    cfg.mc_samples = 2;
    cfg.l2_weight = 1e-3f;
    const std::vector<int> users{0, 1};
    CHECK(fd_error(g, p, cfg, users, 19) < 1e-4);
}

TEST_CASE("elbo gradient matches finite differences (single factor)") {
    const HeteroGraph g = synth::toy_graph();
    ModelParams p = synth::random_params(g, fc(1, 1, 4), false, 0.2f, 6);
    TrainConfig cfg;
    cfg.fc = p.layout.fc;
    // single-factor affiliations are constant, so prototypes carry only the
    // l2 gradient; keep it above finite-difference resolution
    cfg.l2_weight = 1e-3f;
    const std::vector<int> users{0, 1, 2};
    CHECK(fd_error(g, p, cfg, users, 23) < 1e-4);
}

TEST_CASE("float gradients agree with double gradients") {
    const HeteroGraph g = synth::random_graph(41, 8, 10, 6, 2, 4, 3);
    ModelParams p = synth::random_params(g, fc(2, 3, 4), false, 0.2f, 7);
    TrainConfig cfg;
    cfg.fc = p.layout.fc;
    const std::vector<int> users{0, 1, 3, 5};

    std::vector<float> gf;
    std::vector<double> gd;
    const LossBreakdown lf = elbo_batch_grad<float>(g, p, cfg, users, 29, &gf);
    const LossBreakdown ld = elbo_batch_grad<double>(g, p, cfg, users, 29, &gd);
    CHECK(lf.total == doctest::Approx(ld.total).epsilon(1e-5));

    double maxabs = 0.0;
    for (double v : gd) maxabs = std::max(maxabs, std::fabs(v));
    REQUIRE(maxabs > 0.0);
    for (size_t i = 0; i < gd.size(); ++i) {
        const double tol = 1e-4 * maxabs + 1e-3 * std::fabs(gd[i]);
        CHECK(std::fabs(gf[i] - gd[i]) <= tol);
    }
}

TEST_CASE("kernel forward agrees with the serial reference") {
    const HeteroGraph g = synth::random_graph(51, 10, 12, 8, 2, 5, 3);
    for (bool tied : {false, true}) {
        ModelParams p = synth::random_params(g, fc(3, 2, 4), tied, 0.2f, 8);
        TrainConfig cfg;
        cfg.fc = p.layout.fc;
        cfg.decoder_tied = tied;
        const std::vector<int> users{0, 2, 4, 6};
        const LossBreakdown kernel = elbo_loss(g, p, cfg, users, 31);
        const LossBreakdown serial = ref::elbo_loss_serial(g, p, cfg, users, 31);
        CHECK(kernel.negative_log_likelihood ==
              doctest::Approx(serial.negative_log_likelihood).epsilon(1e-4));
        CHECK(kernel.kl == doctest::Approx(serial.kl).epsilon(1e-4));
        CHECK(kernel.l2 == doctest::Approx(serial.l2).epsilon(1e-6));
        CHECK(kernel.total == doctest::Approx(serial.total).epsilon(1e-4));
    }
}

TEST_CASE("kernel forward agrees with reference in sampled and exclude modes") {
    const HeteroGraph g = synth::random_graph(61, 8, 14, 6, 2, 4, 3);
    ModelParams p = synth::random_params(g, fc(2, 2, 3), false, 0.2f, 9);

    TrainConfig sampled;
    sampled.fc = p.layout.fc;
    sampled.softmax_samples = 5;
    const std::vector<int> users{1, 3, 5};
    CHECK(elbo_loss(g, p, sampled, users, 37).total ==
          doctest::Approx(ref::elbo_loss_serial(g, p, sampled, users, 37).total).epsilon(1e-4));

    TrainConfig excl;
    excl.fc = p.layout.fc;
    excl.exclude_target_from_neighborhood = true;
    CHECK(elbo_loss(g, p, excl, users, 41).total ==
          doctest::Approx(ref::elbo_loss_serial(g, p, excl, users, 41).total).epsilon(1e-4));
}

// Compares the OpenMP batch kernels against the serial reference
// implementations on a mid-size synthetic graph and prints timings.

#include <chrono>
#include <cstring>
#include <iostream>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "facrec/elbo.hpp"
#include "facrec/eval.hpp"
#include "facrec/reference.hpp"
#include "support/synth.hpp"

using namespace facrec;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

}  // namespace

int main(int argc, char** argv) {
    const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;

    const int users = quick ? 60 : 1000;
    const int items = quick ? 80 : 2000;
    const int entities = quick ? 60 : 3000;
    const HeteroGraph g =
        synth::random_graph(7, users, items, entities, 5, quick ? 10 : 30, 6);

    FactorConfig fc;
    fc.c1 = 4;
    fc.c2 = 4;
    fc.d = 16;
    fc.gamma = 0.1f;
    ModelParams params = synth::random_params(g, fc, /*tied=*/false, 0.1f, 11);

    TrainConfig cfg;
    cfg.fc = fc;
    cfg.grad_chunks = 8;

    std::vector<int> batch;
    for (int u = 0; u < std::min(users, quick ? 32 : 256); ++u) batch.push_back(u);

    const int reps = quick ? 2 : 5;
    std::vector<float> grad;

    std::cout << "graph: users=" << users << " items=" << items << " entities=" << entities
              << " | batch=" << batch.size() << " reps=" << reps
              << " threads=" << max_threads() << "\n\n";

    // batch gradient: serial reference (loss only) vs kernel at 1 and N threads
    {
        auto t0 = Clock::now();
        LossBreakdown ref_loss{};
        for (int r = 0; r < reps; ++r)
            ref_loss = ref::elbo_loss_serial(g, params, cfg, batch, 42);
        const double t_ref = seconds_since(t0) / reps;

        set_threads(1);
        t0 = Clock::now();
        LossBreakdown l1{};
        for (int r = 0; r < reps; ++r)
            l1 = elbo_batch_grad<float>(g, params, cfg, batch, 42, &grad);
        const double t_k1 = seconds_since(t0) / reps;

        set_threads(max_threads());
        t0 = Clock::now();
        LossBreakdown ln{};
        for (int r = 0; r < reps; ++r)
            ln = elbo_batch_grad<float>(g, params, cfg, batch, 42, &grad);
        const double t_kn = seconds_since(t0) / reps;

        std::cout << "elbo batch:\n"
                  << "  serial reference (loss only): " << t_ref << " s  total=" << ref_loss.total
                  << "\n"
                  << "  kernel loss+grad, 1 thread:   " << t_k1 << " s  total=" << l1.total << "\n"
                  << "  kernel loss+grad, N threads:  " << t_kn << " s  total=" << ln.total << "\n"
                  << "  kernel speedup (1->N): " << (t_kn > 0 ? t_k1 / t_kn : 0.0) << "x\n\n";
    }

    // evaluation: serial reference vs parallel
    {
        SplitResult sr = split_holdout(g, 3, std::min(20, users / 4), std::min(20, users / 4), 0.8);
        const std::vector<int> ks{2, 10, 50};

        auto t0 = Clock::now();
        MetricsReport mr_ser =
            ref::evaluate_serial(params, sr.train_graph, sr.split, EvalGroup::Test, ks);
        const double t_ser = seconds_since(t0);

        set_threads(max_threads());
        t0 = Clock::now();
        MetricsReport mr_par = evaluate(params, sr.train_graph, sr.split, EvalGroup::Test, ks);
        const double t_par = seconds_since(t0);

        std::cout << "evaluate (test group):\n"
                  << "  serial reference: " << t_ser << " s  ndcg@50=" << mr_ser.mean_ndcg[2]
                  << "\n"
                  << "  parallel:         " << t_par << " s  ndcg@50=" << mr_par.mean_ndcg[2]
                  << "\n"
                  << "  speedup: " << (t_par > 0 ? t_ser / t_par : 0.0) << "x\n";
    }
    return 0;
}

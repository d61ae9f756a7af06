#include "facrec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "facrec/eval.hpp"

namespace facrec {

namespace {

bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

TrainResult train(const HeteroGraph& graph, const DatasetSplit& split, const TrainConfig& cfg,
                  uint64_t idmap_digest, std::ostream* log_stream) {
    cfg.validate();
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif

    std::vector<int> train_users;
    for (int u = 0; u < graph.user_count(); ++u)
        if (!graph.user_items[u].empty()) train_users.push_back(u);
    if (train_users.empty()) throw std::runtime_error("train: no users with training interactions");

    SeededRng master(cfg.seed);
    SeededRng init_rng = master.fork(0x1817ULL);
    ModelParams params = init_params(graph, cfg.fc, cfg.decoder_tied, cfg.init_scale, init_rng);
    AdamState adam(params.size());

    TrainResult result;
    result.checkpoint.config = cfg;
    result.checkpoint.idmap_digest = idmap_digest;

    double best_ndcg = -1.0;
    std::vector<float> grad;

    const bool have_val = !split.val_users.empty();
    const std::vector<int> ndcg_k{100};

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order = train_users;
        SeededRng shuffle_rng = master.fork(0xe70c000ULL + static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        const int n_batches =
            (static_cast<int>(order.size()) + cfg.batch_size - 1) / cfg.batch_size;
        LossBreakdown epoch_loss;
        size_t seen = 0;
        for (int b = 0; b < n_batches; ++b) {
            const size_t lo = static_cast<size_t>(b) * cfg.batch_size;
            const size_t hi = std::min(order.size(), lo + cfg.batch_size);
            const std::span<const int> batch(order.data() + lo, hi - lo);
            const uint64_t noise_key =
                mix_seed(cfg.seed, (static_cast<uint64_t>(epoch) << 20) | static_cast<uint64_t>(b));
            const LossBreakdown loss =
                elbo_batch_grad<float>(graph, params, cfg, batch, noise_key, &grad);
            if (!std::isfinite(loss.total))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(b));
            adam_step(params.flat, grad, adam, cfg.lr);
            if (!all_finite(params.flat))
                throw std::runtime_error("train: non-finite parameters after epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(b));
            const double w = static_cast<double>(batch.size());
            epoch_loss.negative_log_likelihood += w * loss.negative_log_likelihood;
            epoch_loss.kl += w * loss.kl;
            epoch_loss.l2 += w * loss.l2;
            epoch_loss.total += w * loss.total;
            seen += batch.size();
        }
        epoch_loss.negative_log_likelihood /= static_cast<double>(seen);
        epoch_loss.kl /= static_cast<double>(seen);
        epoch_loss.l2 /= static_cast<double>(seen);
        epoch_loss.total /= static_cast<double>(seen);

        double val_ndcg = 0.0;
        if (have_val) {
            const MetricsReport rep = evaluate(params, graph, split, EvalGroup::Val, ndcg_k);
            val_ndcg = rep.mean_ndcg[0];
        }
        result.log.push_back({epoch, epoch_loss, val_ndcg});
        if (log_stream) {
            (*log_stream) << "epoch=" << epoch << " loss=" << epoch_loss.total
                          << " nll=" << epoch_loss.negative_log_likelihood
                          << " kl=" << epoch_loss.kl << " l2=" << epoch_loss.l2
                          << " val_ndcg@100=" << val_ndcg << '\n';
            log_stream->flush();
        }

        if (!have_val || val_ndcg > best_ndcg) {
            best_ndcg = val_ndcg;
            result.checkpoint.params = params;
            result.checkpoint.adam = adam;
            result.checkpoint.epoch = epoch;
        }
    }
    return result;
}

}  // namespace facrec

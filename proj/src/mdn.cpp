#include "chroma/mdn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "chroma/error.hpp"

namespace chroma {

namespace {

void check_mixture_geometry(const Tensor& pi, const Tensor& mu, const Tensor& z,
                            double sigma_sq) {
    if (pi.ndim() != 1 || mu.ndim() != 2 || z.ndim() != 1)
        throw ShapeError("mdn loss: pi must be (M), mu (M, d), z (d)");
    if (mu.extent(0) != pi.extent(0))
        throw ShapeError("mdn loss: pi has " + std::to_string(pi.extent(0)) +
                         " weights but mu has " + std::to_string(mu.extent(0)) + " rows");
    if (mu.extent(1) != z.extent(0))
        throw ShapeError("mdn loss: mu columns " + std::to_string(mu.extent(1)) +
                         " vs target dim " + std::to_string(z.extent(0)));
    if (!(sigma_sq > 0)) throw UsageError("mdn loss: sigma_sq must be positive");
}

// z stacked M times into an (M, d) constant, for subtracting from the means.
Tensor replicate_rows(const Tensor& z, int m) {
    const int d = z.extent(0);
    Tensor out({m, d});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) out.at2(i, j) = z[j];
    return out;
}

int argmin_component(const Tensor& mu, const Tensor& z) {
    const int m = mu.extent(0), d = mu.extent(1);
    int best = 0;
    double best_sq = 0;
    for (int i = 0; i < m; ++i) {
        double sq = 0;
        for (int j = 0; j < d; ++j) {
            const double diff = mu.at2(i, j) - z[j];
            sq += diff * diff;
        }
        if (i == 0 || sq < best_sq) {  // strict < keeps the lowest index on ties
            best = i;
            best_sq = sq;
        }
    }
    return best;
}

}  // namespace

Var mdn_loss_exact(Var pi, Var mu, const Tensor& z, double sigma_sq) {
    check_mixture_geometry(pi.value(), mu.value(), z, sigma_sq);
    const int d = z.extent(0);
    Tape& tape = *pi.tape;
    Var diff = sub(mu, tape.constant(replicate_rows(z, mu.value().extent(0))));
    Var sq_dist = sum_rows(square(diff));  // (M) squared distances to z
    Var log_terms = add(log_op(pi), scale(sq_dist, -1.0 / (2.0 * sigma_sq)));
    const double norm = 0.5 * d * std::log(2.0 * M_PI * sigma_sq);
    return add_scalar(neg(logsumexp(log_terms)), norm);
}

Var mdn_loss_min(Var pi, Var mu, const Tensor& z, double sigma_sq, int* selected) {
    check_mixture_geometry(pi.value(), mu.value(), z, sigma_sq);
    const int m = argmin_component(mu.value(), z);
    if (selected) *selected = m;
    Var mu_m = slice0(mu, m, 1);  // (1, d); only this row receives gradient
    Var diff = sub(mu_m, pi.tape->constant(z.reshaped({1, z.extent(0)})));
    Var quad = scale(sum_all(square(diff)), 1.0 / (2.0 * sigma_sq));
    return add(neg(log_op(select(pi, m))), quad);
}

std::vector<Tensor> sample_topk(const GmmParams& params, int k) {
    const int m = params.pi.extent(0);
    if (params.mu.ndim() != 2 || params.mu.extent(0) != m)
        throw ShapeError("sample_topk: mu must have one row per mixture weight");
    if (k < 1 || k > m)
        throw UsageError("sample_topk: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(m) + "]");
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return params.pi[a] > params.pi[b]; });
    const int d = params.mu.extent(1);
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int r = 0; r < k; ++r) {
        Tensor mean({d});
        for (int j = 0; j < d; ++j) mean[j] = params.mu.at2(order[r], j);
        out.push_back(std::move(mean));
    }
    return out;
}

MdnModel::MdnModel(const MdnConfig& config, Rng& rng) : config_(config) {
    if (config_.field_size < 8 || config_.field_size % 8 != 0)
        throw UsageError("mdn: field_size must be a multiple of 8");
    if (config_.embedding_dim < 1 || config_.components < 1)
        throw UsageError("mdn: embedding_dim and components must be >= 1");
    if (!(config_.sigma_sq > 0)) throw UsageError("mdn: sigma_sq must be positive");
    conv1_.init(16, 1, 5, 2, 2, rng);
    conv2_.init(32, 16, 5, 2, 2, rng);
    conv3_.init(64, 32, 4, 2, 1, rng);
    const int spatial = config_.field_size / 8;
    const int head_out = config_.components * config_.embedding_dim + config_.components;
    head_.init(64 * spatial * spatial, head_out, rng);
}

Var MdnModel::forward_raw(Tape& tape, Var grey) {
    // Shape facts are copied out up front: node references returned by
    // value() go stale as soon as the tape grows.
    const std::vector<int> gshape = grey.value().shape();
    if (gshape.size() != 4 || gshape[1] != 1 || gshape[2] != config_.field_size ||
        gshape[3] != config_.field_size)
        throw ShapeError("mdn: grey batch must be (N, 1, " + std::to_string(config_.field_size) +
                         ", " + std::to_string(config_.field_size) + "), got " +
                         Tensor::shape_str(gshape));
    Var h = relu(conv1_.forward(tape, grey));
    h = relu(conv2_.forward(tape, h));
    h = relu(conv3_.forward(tape, h));
    const int spatial = config_.field_size / 8;
    Var flat = reshape(h, {gshape[0], 64 * spatial * spatial});
    return head_.forward(tape, flat);
}

MdnModel::Mixture MdnModel::mixture_of_row(Var raw, int row) const {
    const int m = config_.components, d = config_.embedding_dim;
    Var entries = reshape(slice0(raw, row, 1), {m * d + m});
    Var mu = reshape(slice0(entries, 0, m * d), {m, d});
    Var pi = softmax(slice0(entries, m * d, m), 0);
    return {pi, mu};
}

GmmParams MdnModel::predict(const Tensor& grey) {
    const int f = config_.field_size;
    Tensor batch({1, 1, f, f});
    if (grey.ndim() == 2 && grey.extent(0) == f && grey.extent(1) == f) {
        for (std::int64_t i = 0; i < grey.size(); ++i) batch[i] = grey[i];
    } else if (grey.ndim() == 3 && grey.extent(0) == 1 && grey.extent(1) == f &&
               grey.extent(2) == f) {
        for (std::int64_t i = 0; i < grey.size(); ++i) batch[i] = grey[i];
    } else {
        throw ShapeError("mdn: grey input must be (" + std::to_string(f) + ", " +
                         std::to_string(f) + ") or (1, ...), got " + Tensor::shape_str(grey.shape()));
    }
    Tape tape;
    Mixture mix = mixture_of_row(forward_raw(tape, tape.constant(std::move(batch))), 0);
    return {mix.pi.value(), mix.mu.value(), config_.sigma_sq};
}

NamedTensors MdnModel::parameters() {
    NamedTensors out;
    conv1_.collect("grey1", out);
    conv2_.collect("grey2", out);
    conv3_.collect("grey3", out);
    head_.collect("head", out);
    return out;
}

std::vector<MdnEpochStats> train_mdn(MdnModel& model,
                                     const std::vector<std::pair<Tensor, Tensor>>& pairs,
                                     const MdnTrainConfig& config, std::ostream* log) {
    if (pairs.empty()) throw DataError("train_mdn: no training pairs");
    if (config.epochs < 1) throw UsageError("train_mdn: epochs must be >= 1");
    if (config.batch_size < 1) throw UsageError("train_mdn: batch_size must be >= 1");
    const int f = model.config().field_size;
    const int d = model.config().embedding_dim;
    const int m = model.config().components;
    for (const auto& [grey, z] : pairs) {
        const bool plain = grey.ndim() == 2 && grey.extent(0) == f && grey.extent(1) == f;
        const bool chan = grey.ndim() == 3 && grey.extent(0) == 1 && grey.extent(1) == f &&
                          grey.extent(2) == f;
        if (!plain && !chan)
            throw ShapeError("train_mdn: grey input has shape " + Tensor::shape_str(grey.shape()));
        if (z.ndim() != 1 || z.extent(0) != d)
            throw ShapeError("train_mdn: target embedding has shape " + Tensor::shape_str(z.shape()) +
                             ", expected (" + std::to_string(d) + ")");
    }

    Rng rng(config.seed);
    Adam opt(config.adam);
    const int n = static_cast<int>(pairs.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::vector<MdnEpochStats> history;
    history.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        MdnEpochStats stats;
        stats.usage.assign(static_cast<std::size_t>(m), 0);
        for (int begin = 0; begin < n; begin += config.batch_size) {
            const int bsz = std::min(config.batch_size, n - begin);
            Tensor batch({bsz, 1, f, f});
            for (int b = 0; b < bsz; ++b) {
                const Tensor& grey = pairs[static_cast<std::size_t>(order[begin + b])].first;
                for (std::int64_t i = 0; i < grey.size(); ++i)
                    batch[static_cast<std::int64_t>(b) * f * f + i] = grey[i];
            }
            Tape tape;
            Var raw = model.forward_raw(tape, tape.constant(std::move(batch)));
            Var total{};
            for (int b = 0; b < bsz; ++b) {
                const auto& [grey, z] = pairs[static_cast<std::size_t>(order[begin + b])];
                (void)grey;
                MdnModel::Mixture mix = model.mixture_of_row(raw, b);
                int chosen = -1;
                Var loss = mdn_loss_min(mix.pi, mix.mu, z, model.config().sigma_sq, &chosen);
                ++stats.usage[static_cast<std::size_t>(chosen)];
                stats.loss += loss.value()[0];
                total = b == 0 ? loss : add(total, loss);
            }
            Var objective = scale(total, 1.0 / bsz);
            if (!std::isfinite(objective.value()[0])) {
                const NodeId bad = tape.first_nonfinite_node();
                throw NumericError("train_mdn: non-finite loss at epoch " +
                                   std::to_string(epoch) + " (first bad node: " +
                                   (bad >= 0 ? tape.op_name(bad) : "loss") + ")");
            }
            tape.backward(objective.id);
            opt.step(tape);
        }
        stats.loss /= n;
        history.push_back(stats);
        if (log) {
            *log << "epoch " << epoch << " mdn_loss " << stats.loss << " usage";
            for (std::int64_t count : stats.usage) *log << ' ' << count;
            *log << '\n';
            for (int i = 0; i < m; ++i)
                if (stats.usage[static_cast<std::size_t>(i)] == 0)
                    *log << "warning: component " << i << " unused in epoch " << epoch << '\n';
        }
    }
    return history;
}

}  // namespace chroma

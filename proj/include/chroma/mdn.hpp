// Conditional model from grey input to embedding: a mixture density network
// whose head emits M spherical gaussian components over the d-dimensional
// embedding space. Training uses the min-approximation loss, which optimizes
// only the component whose mean is closest to the target; diverse outputs
// come from taking the top-k means by mixture weight.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "chroma/adam.hpp"
#include "chroma/nn.hpp"
#include "chroma/rng.hpp"
#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

// Mixture parameters predicted for one grey input.
struct GmmParams {
    Tensor pi;              // (M), positive, sums to 1
    Tensor mu;              // (M, d)
    double sigma_sq = 0.1;  // shared spherical variance, fixed during training
};

// Exact mixture negative log likelihood -log sum_i pi_i N(z | mu_i, s^2 I),
// evaluated in log space (log-sum-exp with max subtraction). pi: (M),
// mu: (M, d), z: (d).
Var mdn_loss_exact(Var pi, Var mu, const Tensor& z, double sigma_sq);

// Min-approximation of the mixture loss: picks m = argmin_i ||z - mu_i||
// (ties -> lowest index) on the value side and returns
// -log pi_m + ||z - mu_m||^2 / (2 s^2). Gradients flow only through
// component m; the selection itself is treated as constant. When `selected`
// is non-null the chosen index is written to it.
Var mdn_loss_min(Var pi, Var mu, const Tensor& z, double sigma_sq, int* selected = nullptr);

// The k means with largest mixture weight, in descending order of pi
// (ties -> lower index first). No sampling noise is added.
std::vector<Tensor> sample_topk(const GmmParams& params, int k);

struct MdnConfig {
    int field_size = 16;    // grey input geometry (field_size x field_size)
    int embedding_dim = 8;  // d
    int components = 8;     // M
    double sigma_sq = 0.1;
};

// Grey-conditioned mixture model: a small trainable encoder over the
// lightness channel followed by one fully connected head emitting M*d mean
// activations and M mixture logits. No batchnorm anywhere, so batches of one
// train fine.
class MdnModel {
public:
    MdnModel(const MdnConfig& config, Rng& rng);

    const MdnConfig& config() const { return config_; }

    // Forward a batch of grey inputs (N, 1, F, F) to head rows (N, M*d + M).
    Var forward_raw(Tape& tape, Var grey);

    // Mixture parameters carved out of one row of forward_raw's output:
    // the first M*d entries reshape to the means, the trailing M logits
    // softmax to the weights.
    struct Mixture {
        Var pi;  // (M)
        Var mu;  // (M, d)
    };
    Mixture mixture_of_row(Var raw, int row) const;

    // Convenience single-input inference; grey is (F, F) or (1, F, F).
    GmmParams predict(const Tensor& grey);

    // All trainable tensors, named for checkpointing.
    NamedTensors parameters();

private:
    MdnConfig config_;
    Conv2dLayer conv1_, conv2_, conv3_;
    DenseLayer head_;
};

struct MdnTrainConfig {
    int epochs = 200;
    int batch_size = 8;
    AdamConfig adam;
    std::uint64_t seed = 1;
};

struct MdnEpochStats {
    double loss = 0;                  // min-approximation loss, averaged over pairs
    std::vector<std::int64_t> usage;  // how often each component was selected
};

// Trains the model on (grey input, target embedding) pairs by minimizing the
// batch-averaged min-approximation loss. Targets normally come from a frozen
// encoder's mean. Logs one line per epoch with the loss and per-component
// usage counts; components never selected during an epoch are reported as
// warnings on the log stream, never as failures.
std::vector<MdnEpochStats> train_mdn(MdnModel& model,
                                     const std::vector<std::pair<Tensor, Tensor>>& pairs,
                                     const MdnTrainConfig& config, std::ostream* log = nullptr);

}  // namespace chroma

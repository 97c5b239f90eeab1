// Variational autoencoder over normalized ab color fields, plus the
// grey-conditioned (cvae) variant. The encoder is four stride-2
// convolutions with batchnorm feeding two dense heads (mean and log
// variance); the decoder alternates bilinear upsampling with SAME
// convolutions, ReLU inside and tanh at the output. At 64 pixels the layer
// chain matches the reference architecture exactly; smaller desk sizes
// scale every channel width by field_size/64 and drop upsampling stages.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "chroma/adam.hpp"
#include "chroma/colorspace.hpp"
#include "chroma/losses.hpp"
#include "chroma/nn.hpp"
#include "chroma/pca.hpp"
#include "chroma/rng.hpp"
#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

struct VaeConfig {
    // Must be a power of two and at least 16: four stride-2 encoder stages
    // divide the extent by 16, and the last one convolves with a 4-wide
    // kernel that needs a 2x2 input.
    int field_size = 16;
    int embedding_dim = 8;  // d
    // Encoder widths, innermost last. Empty scales the 64-pixel reference
    // widths {128, 256, 512, 1024} by field_size/64; the decoder mirrors
    // them in reverse.
    std::vector<int> channel_widths;
    enum class Variant { plain, cvae } variant = Variant::plain;
    bool use_batchnorm = true;
    // cvae only: concatenate grey-encoder activations onto decoder stages
    // of matching spatial size.
    bool skip_connections = true;
};

class VaeModel {
public:
    VaeModel(const VaeConfig& config, Rng& rng);

    const VaeConfig& config() const { return config_; }

    // ---- inference surfaces (eval-mode batchnorm, value results) ----

    // Field -> (mu, logvar), each (d). Deterministic given parameters.
    std::pair<Tensor, Tensor> encode(const ColorField& field);

    // z = mu + exp(logvar / 2) * eps with eps drawn from rng, one gaussian
    // per coordinate in index order.
    Tensor reparameterize(const Tensor& mu, const Tensor& logvar, Rng& rng) const;

    // Decode an embedding to a color field. The ab planes land in [-1, 1];
    // the lightness plane is left zero for the plain variant and copies
    // `grey_raw` for the cvae variant. Grey inputs throughout this module
    // are raw lightness planes (field_size x field_size, values 0..100).
    ColorField decode(const Tensor& z);
    ColorField decode(const Tensor& z, const Tensor& grey_raw);

    // All tensors a checkpoint must carry, batchnorm running stats
    // included. Only tensors bound to a tape during forward train.
    NamedTensors parameters();

    // ---- graph-building internals shared by training and inference ----

    struct EncodeVars {
        Var mu;      // (N, d)
        Var logvar;  // (N, d)
    };
    // fields: (N, 2, F, F) normalized ab.
    EncodeVars encode_batch(Tape& tape, Var fields, BatchNormMode mode);

    // z: (N, d). The cvae overload takes grey scaled to [0, 1] as
    // (N, 1, F, F); its gate multiplies into the decoder state whose
    // spatial size matches the grey encoder output (field_size/16), and
    // skip activations concatenate after each upsample of matching size.
    Var decode_batch(Tape& tape, Var z, BatchNormMode mode);
    Var decode_batch(Tape& tape, Var z, Var grey_norm, BatchNormMode mode);

private:
    struct GreyForward {
        Var gate;               // (N, d, F/16, F/16), ReLU output
        std::vector<Var> acts;  // intermediate activations, largest first
    };
    GreyForward grey_forward(Tape& tape, Var grey_norm, BatchNormMode mode);
    Var decode_impl(Tape& tape, Var z, const GreyForward* grey, BatchNormMode mode);
    Tensor to_batch1(const Tensor& plane, int channels, const char* who) const;

    VaeConfig config_;
    std::vector<Conv2dLayer> enc_convs_;
    std::vector<BatchNormLayer> enc_bns_;
    DenseLayer mu_head_, logvar_head_;
    std::vector<Conv2dLayer> dec_convs_;  // one per upsampling stage
    std::vector<BatchNormLayer> dec_bns_;
    std::vector<Conv2dLayer> grey_convs_;  // cvae only
    std::vector<BatchNormLayer> grey_bns_;
    std::vector<int> dec_skip_sources_;  // grey act index per stage, -1 for none
    int gate_stage_ = -1;                // decoder stage the gate multiplies into
    int gate_upsample_ = 1;              // extra gate upsampling at that stage
};

struct VaeTrainConfig {
    int epochs = 30;
    int batch_size = 32;  // at least 2 while batchnorm is enabled
    AdamConfig adam;
    std::uint64_t seed = 1;
    LossWeights weights;
    // Ablation switch: replace the weighted reconstruction stack with a
    // plain sum of squared errors (logged in the hist column).
    bool plain_sse = false;
};

// Per-epoch means over the corpus, one value per loss component.
struct VaeEpochStats {
    double l_hist = 0, l_mah = 0, l_grad = 0, kl = 0, total = 0;
};

struct VaeTrainResult {
    std::vector<VaeEpochStats> history;
    int best_epoch = -1;
    // Parameter copies taken at the lowest-total epoch, same names as
    // VaeModel::parameters().
    std::vector<std::pair<std::string, Tensor>> best_params;
};

// Minimizes the batch-mean of the reconstruction loss plus kl_weight times
// the KL divergence. The PCA basis and histogram must be prefit on the
// corpus. Emits one line per epoch (epoch, L_hist, L_mah, L_grad, KL,
// total) on `log`; per-sample gaussian draws come from `seed`. A non-finite
// loss aborts with a diagnostic naming the first bad node. A trailing
// batch of one sample is folded into its predecessor so batchnorm always
// sees at least two.
VaeTrainResult train_vae(VaeModel& model, const std::vector<ColorField>& corpus,
                         const PcaBasis& basis, const AbHistogram& hist,
                         const VaeTrainConfig& config, std::ostream* log = nullptr);

// Draws n_samples embeddings from the standard normal prior, decodes each
// with the grey conditioning, and k-means clusters the resulting ab fields
// down to n_clusters representatives. Returned fields carry `grey_raw` as
// their lightness plane. cvae variant only.
std::vector<ColorField> cvae_infer(VaeModel& model, const Tensor& grey_raw, int n_samples,
                                   int n_clusters, Rng& rng);

}  // namespace chroma

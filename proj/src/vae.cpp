#include "chroma/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "chroma/error.hpp"
#include "chroma/kmeans.hpp"

namespace chroma {

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// The reference widths at 64 pixels are {128, 256, 512, 1024}; other sizes
// scale them linearly, e.g. 16 -> {32, 64, 128, 256}.
std::vector<int> scaled_widths(int field_size) {
    return {2 * field_size, 4 * field_size, 8 * field_size, 16 * field_size};
}

}  // namespace

VaeModel::VaeModel(const VaeConfig& config, Rng& rng) : config_(config) {
    const int f = config_.field_size;
    if (!power_of_two(f) || f < 16)
        throw UsageError("vae: field_size must be a power of two >= 16 (four stride-2 stages "
                         "divide it by 16 and the innermost 4-wide kernel needs a 2x2 input)");
    if (config_.embedding_dim < 1) throw UsageError("vae: embedding_dim must be >= 1");
    if (config_.channel_widths.empty()) config_.channel_widths = scaled_widths(f);
    if (config_.channel_widths.size() != 4)
        throw UsageError("vae: channel_widths needs exactly 4 entries");
    for (int w : config_.channel_widths)
        if (w < 1) throw UsageError("vae: channel widths must be positive");
    const std::vector<int>& w = config_.channel_widths;
    const int d = config_.embedding_dim;

    enc_convs_.resize(4);
    enc_convs_[0].init(w[0], 2, 5, 2, 2, rng);
    enc_convs_[1].init(w[1], w[0], 5, 2, 2, rng);
    enc_convs_[2].init(w[2], w[1], 5, 2, 2, rng);
    enc_convs_[3].init(w[3], w[2], 4, 2, 1, rng);
    if (config_.use_batchnorm) {
        enc_bns_.resize(4);
        for (int i = 0; i < 4; ++i) enc_bns_[static_cast<std::size_t>(i)].init(w[static_cast<std::size_t>(i)]);
    }
    const int inner = f / 16;
    mu_head_.init(w[3] * inner * inner, d, rng);
    logvar_head_.init(w[3] * inner * inner, d, rng);

    int n_up = 0;
    for (int s = 4; s <= f; s *= 2) ++n_up;
    const bool cvae = config_.variant == VaeConfig::Variant::cvae;
    if (cvae && f > 64)
        throw UsageError("vae: the cvae gate joins the decoder at 4x4 or earlier, so "
                         "field_size must be <= 64");

    // Skip sources: grey activation j lives at f / 2^(j+1) pixels; the
    // decoder stage whose post-upsample extent matches concatenates it.
    dec_skip_sources_.assign(static_cast<std::size_t>(n_up), -1);
    if (cvae && config_.skip_connections)
        for (int i = 0; i < n_up; ++i)
            for (int j = 0; j < 3; ++j)
                if ((f >> (j + 1)) == (4 << i)) dec_skip_sources_[static_cast<std::size_t>(i)] = j;

    // The gate multiplies into the first decoder state at least as large as
    // the grey-encoder output (f/16): the input itself at 16 pixels, the
    // first post-upsample state beyond that.
    const int gate_spatial = f / 16;
    if (cvae) {
        if (gate_spatial == 1) {
            gate_stage_ = -1;
            gate_upsample_ = 1;
        } else {
            gate_stage_ = 0;
            gate_upsample_ = 4 / gate_spatial;
        }
    }

    dec_convs_.resize(static_cast<std::size_t>(n_up));
    if (config_.use_batchnorm) dec_bns_.resize(static_cast<std::size_t>(n_up) - 1);
    for (int i = 0; i < n_up; ++i) {
        const int out_ch = i < n_up - 1 ? w[static_cast<std::size_t>(3 - i)] : 2;
        int in_ch = i == 0 ? d : w[static_cast<std::size_t>(3 - (i - 1))];
        const int skip = dec_skip_sources_[static_cast<std::size_t>(i)];
        if (skip >= 0) in_ch += w[static_cast<std::size_t>(skip)];
        dec_convs_[static_cast<std::size_t>(i)].init(out_ch, in_ch, i == 0 ? 4 : 5, 1, 0, rng);
        if (config_.use_batchnorm && i < n_up - 1)
            dec_bns_[static_cast<std::size_t>(i)].init(out_ch);
    }

    if (cvae) {
        grey_convs_.resize(4);
        grey_convs_[0].init(w[0], 1, 5, 2, 2, rng);
        grey_convs_[1].init(w[1], w[0], 5, 2, 2, rng);
        grey_convs_[2].init(w[2], w[1], 5, 2, 2, rng);
        grey_convs_[3].init(d, w[2], 4, 2, 1, rng);
        if (config_.use_batchnorm) {
            grey_bns_.resize(3);
            for (int i = 0; i < 3; ++i) grey_bns_[static_cast<std::size_t>(i)].init(w[static_cast<std::size_t>(i)]);
        }
    }
}

VaeModel::EncodeVars VaeModel::encode_batch(Tape& tape, Var fields, BatchNormMode mode) {
    const std::vector<int> shape = fields.value().shape();
    const int f = config_.field_size;
    if (shape.size() != 4 || shape[1] != 2 || shape[2] != f || shape[3] != f)
        throw ShapeError("vae encode: fields must be (N, 2, " + std::to_string(f) + ", " +
                         std::to_string(f) + "), got " + Tensor::shape_str(shape));
    Var h = fields;
    for (int i = 0; i < 4; ++i) {
        // The layer chain applies the activation first and normalizes after.
        h = relu(enc_convs_[static_cast<std::size_t>(i)].forward(tape, h));
        if (config_.use_batchnorm) h = enc_bns_[static_cast<std::size_t>(i)].forward(tape, h, mode);
    }
    const int inner = f / 16;
    Var flat = reshape(h, {shape[0], config_.channel_widths[3] * inner * inner});
    return {mu_head_.forward(tape, flat), logvar_head_.forward(tape, flat)};
}

VaeModel::GreyForward VaeModel::grey_forward(Tape& tape, Var grey_norm, BatchNormMode mode) {
    const std::vector<int> shape = grey_norm.value().shape();
    const int f = config_.field_size;
    if (shape.size() != 4 || shape[1] != 1 || shape[2] != f || shape[3] != f)
        throw ShapeError("vae grey encoder: input must be (N, 1, " + std::to_string(f) + ", " +
                         std::to_string(f) + "), got " + Tensor::shape_str(shape));
    GreyForward out;
    Var a = grey_norm;
    for (int i = 0; i < 3; ++i) {
        a = relu(grey_convs_[static_cast<std::size_t>(i)].forward(tape, a));
        if (config_.use_batchnorm) a = grey_bns_[static_cast<std::size_t>(i)].forward(tape, a, mode);
        out.acts.push_back(a);
    }
    out.gate = relu(grey_convs_[3].forward(tape, a));
    return out;
}

Var VaeModel::decode_impl(Tape& tape, Var z, const GreyForward* grey, BatchNormMode mode) {
    const std::vector<int> shape = z.value().shape();
    const int d = config_.embedding_dim;
    if (shape.size() != 2 || shape[1] != d)
        throw ShapeError("vae decode: z must be (N, " + std::to_string(d) + "), got " +
                         Tensor::shape_str(shape));
    Var state = reshape(z, {shape[0], d, 1, 1});
    if (grey && gate_stage_ == -1) state = mul(state, grey->gate);
    const int n_up = static_cast<int>(dec_convs_.size());
    for (int i = 0; i < n_up; ++i) {
        state = bilinear_upsample(state, i == 0 ? 4 : 2);
        if (grey && gate_stage_ == i) {
            Var gate = grey->gate;
            if (gate_upsample_ > 1) gate = bilinear_upsample(gate, gate_upsample_);
            state = mul(state, gate);
        }
        const int skip = dec_skip_sources_[static_cast<std::size_t>(i)];
        if (grey && skip >= 0)
            state = concat_channels(state, grey->acts[static_cast<std::size_t>(skip)]);
        state = same_conv(tape, state, dec_convs_[static_cast<std::size_t>(i)]);
        if (i < n_up - 1) {
            state = relu(state);
            if (config_.use_batchnorm)
                state = dec_bns_[static_cast<std::size_t>(i)].forward(tape, state, mode);
        } else {
            state = tanh_op(state);
        }
    }
    return state;
}

Var VaeModel::decode_batch(Tape& tape, Var z, BatchNormMode mode) {
    return decode_impl(tape, z, nullptr, mode);
}

Var VaeModel::decode_batch(Tape& tape, Var z, Var grey_norm, BatchNormMode mode) {
    if (config_.variant != VaeConfig::Variant::cvae)
        throw UsageError("vae decode: the plain variant takes no grey input");
    GreyForward grey = grey_forward(tape, grey_norm, mode);
    return decode_impl(tape, z, &grey, mode);
}

Tensor VaeModel::to_batch1(const Tensor& plane, int channels, const char* who) const {
    const int f = config_.field_size;
    Tensor out({1, channels, f, f});
    const bool flat = channels == 1 && plane.ndim() == 2 && plane.extent(0) == f &&
                      plane.extent(1) == f;
    const bool chan = plane.ndim() == 3 && plane.extent(0) == channels &&
                      plane.extent(1) == f && plane.extent(2) == f;
    if (!flat && !chan)
        throw ShapeError(std::string(who) + ": input has shape " +
                         Tensor::shape_str(plane.shape()));
    for (std::int64_t i = 0; i < plane.size(); ++i) out[i] = plane[i];
    return out;
}

std::pair<Tensor, Tensor> VaeModel::encode(const ColorField& field) {
    Tape tape;
    Var batch = tape.constant(to_batch1(field.ab, 2, "vae encode"));
    EncodeVars enc = encode_batch(tape, batch, BatchNormMode::eval);
    const int d = config_.embedding_dim;
    Tensor mu({d}), logvar({d});
    for (int i = 0; i < d; ++i) {
        mu[i] = enc.mu.value()[i];
        logvar[i] = enc.logvar.value()[i];
    }
    return {mu, logvar};
}

Tensor VaeModel::reparameterize(const Tensor& mu, const Tensor& logvar, Rng& rng) const {
    if (mu.ndim() != 1 || !mu.same_shape(logvar))
        throw ShapeError("vae reparameterize: mu and logvar must be matching vectors");
    Tensor z(mu.shape());
    for (std::int64_t i = 0; i < mu.size(); ++i)
        z[i] = mu[i] + std::exp(0.5 * logvar[i]) * rng.gaussian();
    return z;
}

ColorField VaeModel::decode(const Tensor& z) {
    if (config_.variant == VaeConfig::Variant::cvae)
        throw UsageError("vae decode: the cvae variant needs a grey input");
    if (z.ndim() != 1 || z.extent(0) != config_.embedding_dim)
        throw ShapeError("vae decode: z has shape " + Tensor::shape_str(z.shape()));
    Tape tape;
    Var out = decode_batch(tape, tape.constant(z.reshaped({1, config_.embedding_dim})),
                           BatchNormMode::eval);
    const int f = config_.field_size;
    ColorField field{Tensor({2, f, f}), Tensor({f, f})};
    for (std::int64_t i = 0; i < field.ab.size(); ++i) field.ab[i] = out.value()[i];
    return field;
}

ColorField VaeModel::decode(const Tensor& z, const Tensor& grey_raw) {
    if (config_.variant != VaeConfig::Variant::cvae)
        throw UsageError("vae decode: the plain variant takes no grey input");
    if (z.ndim() != 1 || z.extent(0) != config_.embedding_dim)
        throw ShapeError("vae decode: z has shape " + Tensor::shape_str(z.shape()));
    Tensor grey_norm = to_batch1(grey_raw, 1, "vae decode");
    for (std::int64_t i = 0; i < grey_norm.size(); ++i) grey_norm[i] /= 100.0;
    Tape tape;
    Var out = decode_batch(tape, tape.constant(z.reshaped({1, config_.embedding_dim})),
                           tape.constant(std::move(grey_norm)), BatchNormMode::eval);
    const int f = config_.field_size;
    ColorField field{Tensor({2, f, f}), Tensor({f, f})};
    for (std::int64_t i = 0; i < field.ab.size(); ++i) field.ab[i] = out.value()[i];
    for (std::int64_t i = 0; i < field.L.size(); ++i) field.L[i] = grey_raw[i];
    return field;
}

NamedTensors VaeModel::parameters() {
    NamedTensors out;
    for (std::size_t i = 0; i < enc_convs_.size(); ++i)
        enc_convs_[i].collect("enc" + std::to_string(i + 1), out);
    for (std::size_t i = 0; i < enc_bns_.size(); ++i)
        enc_bns_[i].collect("enc_bn" + std::to_string(i + 1), out);
    mu_head_.collect("mu_head", out);
    logvar_head_.collect("logvar_head", out);
    for (std::size_t i = 0; i < dec_convs_.size(); ++i)
        dec_convs_[i].collect("dec" + std::to_string(i + 1), out);
    for (std::size_t i = 0; i < dec_bns_.size(); ++i)
        dec_bns_[i].collect("dec_bn" + std::to_string(i + 1), out);
    for (std::size_t i = 0; i < grey_convs_.size(); ++i)
        grey_convs_[i].collect("grey" + std::to_string(i + 1), out);
    for (std::size_t i = 0; i < grey_bns_.size(); ++i)
        grey_bns_[i].collect("grey_bn" + std::to_string(i + 1), out);
    return out;
}

VaeTrainResult train_vae(VaeModel& model, const std::vector<ColorField>& corpus,
                         const PcaBasis& basis, const AbHistogram& hist,
                         const VaeTrainConfig& config, std::ostream* log) {
    if (corpus.empty()) throw DataError("train_vae: empty corpus");
    if (config.epochs < 1) throw UsageError("train_vae: epochs must be >= 1");
    if (config.batch_size < 1) throw UsageError("train_vae: batch_size must be >= 1");
    const VaeConfig& mc = model.config();
    const int f = mc.field_size, d = mc.embedding_dim;
    const bool cvae = mc.variant == VaeConfig::Variant::cvae;
    const int n = static_cast<int>(corpus.size());
    if (mc.use_batchnorm && (config.batch_size < 2 || n < 2))
        throw UsageError("train_vae: batchnorm needs batches of at least 2 samples");
    for (const ColorField& field : corpus) {
        if (field.ab.ndim() != 3 || field.ab.extent(0) != 2 || field.ab.extent(1) != f ||
            field.ab.extent(2) != f)
            throw ShapeError("train_vae: field ab has shape " +
                             Tensor::shape_str(field.ab.shape()));
        if (field.L.ndim() != 2 || field.L.extent(0) != f || field.L.extent(1) != f)
            throw ShapeError("train_vae: field lightness has shape " +
                             Tensor::shape_str(field.L.shape()));
    }
    if (!config.plain_sse && basis.dim() != 2 * f * f)
        throw ShapeError("train_vae: basis dimension " + std::to_string(basis.dim()) +
                         " does not match fields of " + std::to_string(2 * f * f));

    // Batch layout is fixed up front; a trailing singleton is folded into
    // the previous batch so batchnorm always sees at least two samples.
    std::vector<std::pair<int, int>> batches;  // (begin, size)
    for (int begin = 0; begin < n; begin += config.batch_size)
        batches.emplace_back(begin, std::min(config.batch_size, n - begin));
    if (mc.use_batchnorm && batches.size() > 1 && batches.back().second == 1) {
        batches.pop_back();
        batches.back().second += 1;
    }

    Rng rng(config.seed);
    Adam opt(config.adam);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    VaeTrainResult result;
    double best_total = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        VaeEpochStats stats;
        for (const auto& [begin, bsz] : batches) {
            Tensor ab_batch({bsz, 2, f, f});
            Tensor grey_batch = cvae ? Tensor({bsz, 1, f, f}) : Tensor{};
            for (int b = 0; b < bsz; ++b) {
                const ColorField& field = corpus[static_cast<std::size_t>(order[begin + b])];
                const std::int64_t ab_base = static_cast<std::int64_t>(b) * 2 * f * f;
                for (std::int64_t i = 0; i < field.ab.size(); ++i)
                    ab_batch[ab_base + i] = field.ab[i];
                if (cvae) {
                    const std::int64_t g_base = static_cast<std::int64_t>(b) * f * f;
                    for (std::int64_t i = 0; i < field.L.size(); ++i)
                        grey_batch[g_base + i] = field.L[i] / 100.0;
                }
            }
            Tensor eps({bsz, d});
            for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = rng.gaussian();

            Tape tape;
            Var fields = tape.constant(std::move(ab_batch));
            VaeModel::EncodeVars enc = model.encode_batch(tape, fields, BatchNormMode::train);
            Var z = add(enc.mu, mul(exp_op(scale(enc.logvar, 0.5)), tape.constant(eps)));
            Var pred = cvae ? model.decode_batch(tape, z, tape.constant(std::move(grey_batch)),
                                                 BatchNormMode::train)
                            : model.decode_batch(tape, z, BatchNormMode::train);

            Var recon{};
            for (int b = 0; b < bsz; ++b) {
                const ColorField& field = corpus[static_cast<std::size_t>(order[begin + b])];
                Var pred_b = reshape(slice0(pred, b, 1), {2, f, f});
                Var rec{};
                if (config.plain_sse) {
                    rec = sum_all(square(sub(pred_b, tape.constant(field.ab))));
                    stats.l_hist += rec.value()[0];
                } else {
                    Var lh = loss_hist(pred_b, field, hist);
                    Var lm = loss_mah(pred_b, field, basis);
                    Var lg = loss_grad(pred_b, field);
                    stats.l_hist += lh.value()[0];
                    stats.l_mah += lm.value()[0];
                    stats.l_grad += lg.value()[0];
                    rec = add(lh, add(scale(lm, config.weights.lambda_mah),
                                      scale(lg, config.weights.lambda_grad)));
                }
                recon = b == 0 ? rec : add(recon, rec);
            }
            Var kl = loss_kl(enc.mu, enc.logvar);
            stats.kl += kl.value()[0];
            Var objective = scale(add(recon, scale(kl, config.weights.kl_weight)), 1.0 / bsz);
            const double batch_total = objective.value()[0] * bsz;
            stats.total += batch_total;
            if (!std::isfinite(batch_total)) {
                const NodeId bad = tape.first_nonfinite_node();
                throw NumericError("train_vae: non-finite loss at epoch " +
                                   std::to_string(epoch) + " (first bad node: " +
                                   (bad >= 0 ? tape.op_name(bad) : "loss") + ")");
            }
            tape.backward(objective.id);
            opt.step(tape);
        }
        stats.l_hist /= n;
        stats.l_mah /= n;
        stats.l_grad /= n;
        stats.kl /= n;
        stats.total /= n;
        result.history.push_back(stats);
        if (log)
            *log << "epoch " << epoch << " hist " << stats.l_hist << " mah " << stats.l_mah
                 << " grad " << stats.l_grad << " kl " << stats.kl << " total " << stats.total
                 << '\n';
        if (result.best_epoch < 0 || stats.total < best_total) {
            best_total = stats.total;
            result.best_epoch = epoch;
            result.best_params.clear();
            for (const auto& [name, tensor] : model.parameters())
                result.best_params.emplace_back(name, *tensor);
        }
    }
    return result;
}

std::vector<ColorField> cvae_infer(VaeModel& model, const Tensor& grey_raw, int n_samples,
                                   int n_clusters, Rng& rng) {
    if (model.config().variant != VaeConfig::Variant::cvae)
        throw UsageError("cvae_infer: model is not the cvae variant");
    if (n_samples < 1 || n_clusters < 1)
        throw UsageError("cvae_infer: n_samples and n_clusters must be >= 1");
    const int f = model.config().field_size, d = model.config().embedding_dim;
    if (grey_raw.ndim() != 2 || grey_raw.extent(0) != f || grey_raw.extent(1) != f)
        throw ShapeError("cvae_infer: grey input has shape " +
                         Tensor::shape_str(grey_raw.shape()));

    Tensor all_z({n_samples, d});
    for (std::int64_t i = 0; i < all_z.size(); ++i) all_z[i] = rng.gaussian();

    Tensor rows({n_samples, 2 * f * f});
    const int chunk = 64;
    for (int begin = 0; begin < n_samples; begin += chunk) {
        const int bsz = std::min(chunk, n_samples - begin);
        Tensor z({bsz, d});
        for (int b = 0; b < bsz; ++b)
            for (int j = 0; j < d; ++j) z.at2(b, j) = all_z.at2(begin + b, j);
        Tensor grey({bsz, 1, f, f});
        for (int b = 0; b < bsz; ++b)
            for (std::int64_t i = 0; i < grey_raw.size(); ++i)
                grey[static_cast<std::int64_t>(b) * f * f + i] = grey_raw[i] / 100.0;
        Tape tape;
        Var out = model.decode_batch(tape, tape.constant(std::move(z)),
                                     tape.constant(std::move(grey)), BatchNormMode::eval);
        for (int b = 0; b < bsz; ++b)
            for (std::int64_t i = 0; i < 2 * f * f; ++i)
                rows.at2(begin + b, i) = out.value()[static_cast<std::int64_t>(b) * 2 * f * f + i];
    }

    KmeansResult clusters = kmeans(rows, n_clusters, rng);
    std::vector<ColorField> fields;
    fields.reserve(static_cast<std::size_t>(n_clusters));
    for (int c = 0; c < n_clusters; ++c) {
        ColorField field{Tensor({2, f, f}), Tensor({f, f})};
        for (std::int64_t i = 0; i < field.ab.size(); ++i) field.ab[i] = clusters.centers.at2(c, i);
        for (std::int64_t i = 0; i < field.L.size(); ++i) field.L[i] = grey_raw[i];
        fields.push_back(std::move(field));
    }
    return fields;
}

}  // namespace chroma

#include "chroma/nn.hpp"

#include <cmath>

#include "chroma/error.hpp"

namespace chroma {

void Conv2dLayer::init(int out_ch, int in_ch, int k, int stride_, int pad_, Rng& rng) {
    const double he = std::sqrt(2.0 / (in_ch * k * k));
    kernel = randn({out_ch, in_ch, k, k}, rng, he);
    bias = Tensor({out_ch});
    stride = stride_;
    pad = pad_;
}

Var Conv2dLayer::forward(Tape& tape, Var x) {
    return bias_channel(conv2d(x, tape.param(kernel), stride, pad), tape.param(bias));
}

void Conv2dLayer::collect(const std::string& prefix, NamedTensors& out) {
    out.emplace_back(prefix + ".kernel", &kernel);
    out.emplace_back(prefix + ".bias", &bias);
}

void BatchNormLayer::init(int channels) {
    gamma = Tensor({channels}, 1.0);
    beta = Tensor({channels});
    stats.running_mean = Tensor({channels});
    stats.running_var = Tensor({channels}, 1.0);
}

Var BatchNormLayer::forward(Tape& tape, Var x, BatchNormMode mode) {
    return batchnorm(x, tape.param(gamma), tape.param(beta), stats, mode);
}

void BatchNormLayer::collect(const std::string& prefix, NamedTensors& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
    out.emplace_back(prefix + ".running_mean", &stats.running_mean);
    out.emplace_back(prefix + ".running_var", &stats.running_var);
}

void DenseLayer::init(int in_dim, int out_dim, Rng& rng) {
    weight = randn({in_dim, out_dim}, rng, std::sqrt(2.0 / in_dim));
    bias = Tensor({out_dim});
}

Var DenseLayer::forward(Tape& tape, Var x) {
    return fully_connected(x, tape.param(weight), tape.param(bias));
}

void DenseLayer::collect(const std::string& prefix, NamedTensors& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
}

Var same_conv(Tape& tape, Var x, Conv2dLayer& conv) {
    const int k = conv.kernel.extent(2);
    if (conv.stride != 1) throw UsageError("same_conv: stride must be 1");
    const int near = (k - 1) / 2, far = k / 2;
    Var padded = zero_pad2d(x, near, far, near, far);
    return bias_channel(conv2d(padded, tape.param(conv.kernel), 1, 0), tape.param(conv.bias));
}

}  // namespace chroma

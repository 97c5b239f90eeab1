#pragma once

#include <string>
#include <utility>
#include <vector>

#include "chroma/rng.hpp"
#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

// Named views over a model's persistent tensors: trainable parameters plus
// batchnorm running statistics. Checkpoints serialize exactly this list.
using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

// Convolution with per-channel bias. Weights use He-normal initialization
// (fan-in scaled); the optimizer picks parameters up through tape bindings.
struct Conv2dLayer {
    Tensor kernel;  // (O, C, k, k)
    Tensor bias;    // (O)
    int stride = 1;
    int pad = 0;

    void init(int out_ch, int in_ch, int k, int stride_, int pad_, Rng& rng);
    Var forward(Tape& tape, Var x);
    void collect(const std::string& prefix, NamedTensors& out);
};

struct BatchNormLayer {
    Tensor gamma;  // (C)
    Tensor beta;   // (C)
    BatchNormStats stats;

    void init(int channels);
    Var forward(Tape& tape, Var x, BatchNormMode mode);
    void collect(const std::string& prefix, NamedTensors& out);
};

struct DenseLayer {
    Tensor weight;  // (I, O)
    Tensor bias;    // (O)

    void init(int in_dim, int out_dim, Rng& rng);
    Var forward(Tape& tape, Var x);  // x: (N, I)
    void collect(const std::string& prefix, NamedTensors& out);
};

// Stride-1 convolution preserving spatial extent for any kernel size; even
// kernels need asymmetric zero padding (extra row/column on the far side).
Var same_conv(Tape& tape, Var x, Conv2dLayer& conv);

}  // namespace chroma

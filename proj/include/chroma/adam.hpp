#pragma once

#include <cstdint>
#include <map>

#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by parameter storage
// address, so one optimizer instance carries state across the fresh tapes a
// training loop records each step; it must not outlive the model it updates.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }

    // Updates every bound parameter the tape holds a gradient for; parameters
    // whose gradient never materialized are left untouched.
    void step(Tape& tape);

    // Updates a single parameter buffer in place.
    void update(Tensor& param, const Tensor& grad);

  private:
    struct Slot {
        Tensor m, v;
        std::int64_t t = 0;
    };
    AdamConfig cfg_;
    std::map<const Tensor*, Slot> slots_;
};

}  // namespace chroma

#include "chroma/adam.hpp"

#include <cmath>

namespace chroma {

void Adam::step(Tape& tape) {
    for (const Tape::ParamBinding& b : tape.params()) {
        const Tensor& g = tape.grad(b.id);
        if (g.empty()) continue;
        update(*b.storage, g);
    }
}

void Adam::update(Tensor& param, const Tensor& grad) {
    if (!param.same_shape(grad))
        throw ShapeError("adam: gradient shape " + Tensor::shape_str(grad.shape()) +
                         " does not match parameter " + Tensor::shape_str(param.shape()));
    Slot& s = slots_[&param];
    if (s.m.empty()) {
        s.m = Tensor(param.shape());
        s.v = Tensor(param.shape());
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::int64_t i = 0; i < param.size(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * grad[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = s.m[i] / c1;
        const double vhat = s.v[i] / c2;
        param[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
}

}  // namespace chroma

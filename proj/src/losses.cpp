#include "chroma/losses.hpp"

#include <algorithm>
#include <cmath>

#include "chroma/error.hpp"

namespace chroma {

namespace {

constexpr double kSigmaFloor = 1e-6;

void check_field_shape(const Var& pred, const ColorField& target, const char* who) {
    const Tensor& pv = pred.value();
    if (!pv.same_shape(target.ab))
        throw ShapeError(std::string(who) + ": prediction " + Tensor::shape_str(pv.shape()) +
                         " does not match target " + Tensor::shape_str(target.ab.shape()));
}

}  // namespace

Var loss_mah(Var pred, const ColorField& target, const PcaBasis& basis) {
    check_field_shape(pred, target, "loss_mah");
    const int d = static_cast<int>(pred.value().size());
    if (d != basis.dim())
        throw ShapeError("loss_mah: field dimension " + std::to_string(d) + " does not match basis " +
                         std::to_string(basis.dim()));
    const int k = basis.k();
    Tape& tape = *pred.tape;

    Var diff = sub(reshape(pred, {1, d}), tape.constant(flatten_field(target).reshaped({1, d})));

    // Rows of the basis transposed to (D, k) so one matmul yields all
    // projection coefficients.
    Tensor pt({d, k});
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j) pt.at2(j, i) = basis.components.at2(i, j);
    Var coeffs = matmul(diff, tape.constant(pt));  // (1, k)

    Tensor inv_var({1, k});
    for (int i = 0; i < k; ++i) {
        const double s = std::max(basis.sigmas[i], kSigmaFloor);
        inv_var.at2(0, i) = 1.0 / (s * s);
    }
    Var projected = sum_all(mul(square(coeffs), tape.constant(inv_var)));

    Var residual = sub(diff, matmul(coeffs, tape.constant(basis.components)));
    const double last = std::max(basis.sigmas[k - 1], kSigmaFloor);
    Var residual_term = scale(sum_all(square(residual)), 1.0 / (last * last));

    return add(projected, residual_term);
}

Var loss_hist(Var pred, const ColorField& target, const AbHistogram& hist) {
    check_field_shape(pred, target, "loss_hist");
    Tape& tape = *pred.tape;
    const Tensor w = pixel_weights(target, hist);
    Tensor wmap(target.ab.shape());  // weight replicated over both ab channels
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < target.height(); ++y)
            for (int x = 0; x < target.width(); ++x) wmap.at3(c, y, x) = w.at2(y, x);
    Var diff = sub(pred, tape.constant(target.ab));
    return sum_all(mul(square(diff), tape.constant(wmap)));
}

Var loss_grad(Var pred, const ColorField& target) {
    check_field_shape(pred, target, "loss_grad");
    Tape& tape = *pred.tape;
    Var loss = tape.constant(Tensor::scalar(0.0));
    for (int axis : {1, 2}) {
        Var dp = forward_diff(pred, axis);
        Tape scratch;  // target differences are constants; compute them off-graph
        const Tensor dt = forward_diff(scratch.constant(target.ab), axis).value();
        loss = add(loss, sum_all(square(sub(dp, tape.constant(dt)))));
    }
    return loss;
}

Var loss_dec(Var pred, const ColorField& target, const PcaBasis& basis, const AbHistogram& hist,
             const LossWeights& weights) {
    Var total = loss_hist(pred, target, hist);
    total = add(total, scale(loss_mah(pred, target, basis), weights.lambda_mah));
    total = add(total, scale(loss_grad(pred, target), weights.lambda_grad));
    return total;
}

Var loss_kl(Var mu, Var logvar) {
    if (!mu.value().same_shape(logvar.value()))
        throw ShapeError("loss_kl: mu and logvar must share a shape");
    const double d = static_cast<double>(mu.value().size());
    Var moments = add(sum_all(square(mu)), sum_all(exp_op(logvar)));
    Var entropy = add_scalar(sum_all(logvar), d);
    return scale(sub(moments, entropy), 0.5);
}

}  // namespace chroma

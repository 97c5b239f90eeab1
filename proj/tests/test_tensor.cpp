#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "chroma/adam.hpp"
#include "chroma/rng.hpp"
#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"
#include "support/fd.hpp"

using namespace chroma;

namespace {

// Independent convolution oracle: direct quadruple loop, written without
// reference to the library's conv code.
Tensor naive_conv(const Tensor& in, const Tensor& ker, int stride, int pad) {
    const int n = in.extent(0), c = in.extent(1), h = in.extent(2), w = in.extent(3);
    const int o = ker.extent(0), k = ker.extent(2);
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    Tensor out({n, o, oh, ow});
    for (int ni = 0; ni < n; ++ni)
        for (int oc = 0; oc < o; ++oc)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double s = 0.0;
                    for (int ci = 0; ci < c; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y * stride + ky - pad;
                                const int ix = x * stride + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                s += in.at4(ni, ci, iy, ix) * ker.at4(oc, ci, ky, kx);
                            }
                    out.at4(ni, oc, y, x) = s;
                }
    return out;
}

Var conv_forward(Tape&, const std::vector<Var>& leaves, int stride, int pad) {
    return sum_all(square(conv2d(leaves[0], leaves[1], stride, pad)));
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces input") {
    Rng rng(7);
    Tensor in = randn({1, 1, 3, 3}, rng);
    Tensor ker = Tensor::from({1, 1, 1, 1}, {1.0});
    Tape tape;
    Var out = conv2d(tape.constant(in), tape.constant(ker), 1, 0);
    CHECK(max_abs_diff(out.value(), in.reshaped({1, 1, 3, 3})) == 0.0);
}

TEST_CASE("conv2d ones kernel counts overlap") {
    Tensor in({1, 1, 4, 4}, 1.0);
    Tensor ker({1, 1, 3, 3}, 1.0);
    Tape tape;
    Var out = conv2d(tape.constant(in), tape.constant(ker), 1, 0);
    REQUIRE(out.value().shape() == std::vector<int>{1, 1, 2, 2});
    for (std::int64_t i = 0; i < out.value().size(); ++i) CHECK(out.value()[i] == doctest::Approx(9.0));
}

TEST_CASE("conv2d matches the naive loop oracle") {
    Rng rng(11);
    Tensor in = randn({1, 2, 5, 5}, rng);
    Tensor ker = randn({3, 2, 3, 3}, rng);
    Tape tape;
    Var out = conv2d(tape.constant(in), tape.constant(ker), 2, 1);
    CHECK(max_abs_diff(out.value(), naive_conv(in, ker, 2, 1)) < 1e-12);
}

TEST_CASE("conv2d im2col path is bitwise identical to the loop path") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(2));
        Tensor in = randn({2, 3, 5, 6}, rng);
        Tensor ker = randn({4, 3, 3, 3}, rng);
        Tape tape;
        Var out = conv2d(tape.constant(in), tape.constant(ker), stride, pad);
        const Tensor ref = conv2d_reference(in, ker, stride, pad);
        REQUIRE(out.value().same_shape(ref));
        for (std::int64_t i = 0; i < ref.size(); ++i) CHECK(out.value()[i] == ref[i]);
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
    Tape tape;
    Var in = tape.constant(Tensor({1, 2, 4, 4}));
    Var ker = tape.constant(Tensor({1, 3, 3, 3}));
    CHECK_THROWS_AS(conv2d(in, ker, 1, 0), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        const int stride = 1 + static_cast<int>(rng.below(2));
        std::vector<Tensor> inputs = {randn({1, 2, 5, 5}, rng), randn({2, 2, 3, 3}, rng)};
        const double rel = fd::rel_error(
            [stride](Tape& t, const std::vector<Var>& l) { return conv_forward(t, l, stride, 1); }, inputs);
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("bilinear_upsample factor 1 is the identity") {
    Rng rng(19);
    Tensor in = randn({2, 2, 3, 3}, rng);
    Tape tape;
    Var out = bilinear_upsample(tape.constant(in), 1);
    CHECK(max_abs_diff(out.value(), in) == 0.0);
}

TEST_CASE("bilinear_upsample interpolates the two-pixel row") {
    Tape tape;
    Var out = bilinear_upsample(tape.constant(Tensor::from({1, 1, 1, 2}, {0.0, 1.0})), 2);
    REQUIRE(out.value().shape() == std::vector<int>{1, 1, 2, 4});
    const double expect[4] = {0.0, 0.25, 0.75, 1.0};
    for (int row = 0; row < 2; ++row)
        for (int col = 0; col < 4; ++col)
            CHECK(out.value().at4(0, 0, row, col) == doctest::Approx(expect[col]).epsilon(1e-12));
}

TEST_CASE("bilinear_upsample preserves constants") {
    Tape tape;
    Var out = bilinear_upsample(tape.constant(Tensor({1, 3, 2, 2}, 0.37)), 4);
    for (std::int64_t i = 0; i < out.value().size(); ++i) CHECK(out.value()[i] == doctest::Approx(0.37));
}

TEST_CASE("bilinear_upsample rejects factor below 1") {
    Tape tape;
    Var in = tape.constant(Tensor({1, 1, 2, 2}));
    CHECK_THROWS_AS(bilinear_upsample(in, 0), UsageError);
}

TEST_CASE("bilinear_upsample gradients match finite differences") {
    Rng rng(23);
    std::vector<Tensor> inputs = {randn({1, 2, 3, 3}, rng)};
    const double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) { return sum_all(square(bilinear_upsample(l[0], 2))); }, inputs);
    CHECK(rel < 1e-6);
}

TEST_CASE("zero_pad2d places values and backpropagates the window") {
    Tensor in = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tape tape;
    Var out = zero_pad2d(tape.constant(in), 1, 2, 1, 2);
    REQUIRE(out.value().shape() == std::vector<int>{1, 1, 5, 5});
    CHECK(out.value().at4(0, 0, 0, 0) == 0.0);
    CHECK(out.value().at4(0, 0, 1, 1) == 1.0);
    CHECK(out.value().at4(0, 0, 2, 2) == 4.0);
    CHECK(sum(out.value()) == doctest::Approx(10.0));

    Rng rng(29);
    std::vector<Tensor> inputs = {randn({1, 2, 3, 3}, rng)};
    const double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) { return sum_all(square(zero_pad2d(l[0], 1, 2, 1, 2))); }, inputs);
    CHECK(rel < 1e-6);
}

TEST_CASE("forward_diff differences rows and columns") {
    Tensor in = Tensor::from({1, 2, 3}, {1, 2, 4, 7, 11, 16});
    Tape tape;
    Var dv = forward_diff(tape.constant(in), 1);
    REQUIRE(dv.value().shape() == std::vector<int>{1, 1, 3});
    CHECK(dv.value()[0] == 6.0);
    CHECK(dv.value()[1] == 9.0);
    CHECK(dv.value()[2] == 12.0);
    Var dh = forward_diff(tape.constant(in), 2);
    REQUIRE(dh.value().shape() == std::vector<int>{1, 2, 2});
    CHECK(dh.value()[0] == 1.0);
    CHECK(dh.value()[3] == 5.0);
}

TEST_CASE("forward_diff kills constant shifts and matches finite differences") {
    Rng rng(31);
    Tensor a = randn({2, 4, 4}, rng);
    Tensor b = a;
    for (std::int64_t i = 0; i < b.size(); ++i) b[i] += 0.7;
    Tape tape;
    Var da = forward_diff(tape.constant(a), 1);
    Var db = forward_diff(tape.constant(b), 1);
    CHECK(max_abs_diff(da.value(), db.value()) < 1e-12);

    std::vector<Tensor> inputs = {randn({2, 4, 4}, rng)};
    for (int axis : {1, 2}) {
        const double rel = fd::rel_error(
            [axis](Tape&, const std::vector<Var>& l) { return sum_all(square(forward_diff(l[0], axis))); },
            inputs);
        CHECK(rel < 1e-6);
    }
}

TEST_CASE("concat_channels stacks and splits gradients") {
    Tensor a = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({1, 2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
    Tape tape;
    Var out = concat_channels(tape.constant(a), tape.constant(b));
    REQUIRE(out.value().shape() == std::vector<int>{1, 3, 2, 2});
    CHECK(out.value().at4(0, 0, 1, 1) == 4.0);
    CHECK(out.value().at4(0, 1, 0, 0) == 5.0);
    CHECK(out.value().at4(0, 2, 1, 1) == 12.0);

    Rng rng(37);
    std::vector<Tensor> inputs = {randn({2, 2, 3, 3}, rng), randn({2, 1, 3, 3}, rng)};
    const double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) { return sum_all(square(concat_channels(l[0], l[1]))); }, inputs);
    CHECK(rel < 1e-6);
}

TEST_CASE("batchnorm normalizes per channel in train mode") {
    Rng rng(41);
    Tensor in = randn({4, 3, 2, 2}, rng, 1000.0);  // large spread keeps eps negligible
    Tape tape;
    BatchNormStats stats;
    Var out = batchnorm(tape.constant(in), tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3})),
                        stats, BatchNormMode::train);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 4; ++n)
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 2; ++x) mean += out.value().at4(n, c, y, x);
        mean /= 16.0;
        for (int n = 0; n < 4; ++n)
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 2; ++x) {
                    const double d = out.value().at4(n, c, y, x) - mean;
                    var += d * d;
                }
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-8);
    }
}

TEST_CASE("batchnorm passes through an already-normalized batch") {
    // Hand-built channel with exact zero mean and unit variance.
    Tensor in({2, 1, 1, 2});
    in.at4(0, 0, 0, 0) = 1.0;
    in.at4(0, 0, 0, 1) = -1.0;
    in.at4(1, 0, 0, 0) = 1.0;
    in.at4(1, 0, 0, 1) = -1.0;
    Tape tape;
    BatchNormStats stats;
    Var out = batchnorm(tape.constant(in), tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1})),
                        stats, BatchNormMode::train);
    CHECK(max_abs_diff(out.value(), in) < 1e-4);  // eps shrinks values slightly
}

TEST_CASE("batchnorm rejects a train-mode batch of one") {
    Tape tape;
    BatchNormStats stats;
    Var in = tape.constant(Tensor({1, 2, 2, 2}, 1.0));
    Var gamma = tape.constant(Tensor({2}, 1.0));
    Var beta = tape.constant(Tensor({2}));
    CHECK_THROWS_AS(batchnorm(in, gamma, beta, stats, BatchNormMode::train), NumericError);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
    Rng rng(43);
    BatchNormStats stats;
    Tensor batch = randn({4, 2, 2, 2}, rng);
    {
        Tape tape;
        batchnorm(tape.constant(batch), tape.constant(Tensor({2}, 1.0)), tape.constant(Tensor({2})),
                  stats, BatchNormMode::train);
    }
    const Tensor saved_mean = stats.running_mean;
    Tensor probe({1, 2, 1, 1});
    probe.at4(0, 0, 0, 0) = saved_mean[0];
    probe.at4(0, 1, 0, 0) = saved_mean[1];
    Tape tape;
    Var out = batchnorm(tape.constant(probe), tape.constant(Tensor({2}, 1.0)), tape.constant(Tensor({2})),
                        stats, BatchNormMode::eval);
    // Probing at the running mean lands exactly on beta = 0.
    CHECK(std::abs(out.value()[0]) < 1e-12);
    CHECK(std::abs(out.value()[1]) < 1e-12);
    CHECK(max_abs_diff(stats.running_mean, saved_mean) == 0.0);  // eval leaves stats alone
}

TEST_CASE("batchnorm gradients match finite differences") {
    Rng rng(47);
    std::vector<Tensor> inputs = {randn({4, 3, 2, 2}, rng), randn({3}, rng), randn({3}, rng)};
    const double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) {
            BatchNormStats stats;
            return sum_all(square(batchnorm(l[0], l[1], l[2], stats, BatchNormMode::train)));
        },
        inputs);
    CHECK(rel < 1e-5);
}

TEST_CASE("fully_connected identity weight reproduces input") {
    Tensor in = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor w({3, 3});
    for (int i = 0; i < 3; ++i) w.at2(i, i) = 1.0;
    Tape tape;
    Var out = fully_connected(tape.constant(in), tape.constant(w), tape.constant(Tensor({3})));
    CHECK(max_abs_diff(out.value(), in) == 0.0);
}

TEST_CASE("fully_connected hand-checked affine map") {
    Tensor in = Tensor::from({1, 2}, {1, 2});
    Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from({2}, {1, 1});
    Tape tape;
    Var out = fully_connected(tape.constant(in), tape.constant(w), tape.constant(b));
    CHECK(out.value()[0] == doctest::Approx(2.0));
    CHECK(out.value()[1] == doctest::Approx(3.0));
}

TEST_CASE("fully_connected gradients match finite differences") {
    Rng rng(53);
    std::vector<Tensor> inputs = {randn({3, 4}, rng), randn({4, 2}, rng), randn({2}, rng)};
    const double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) {
            return sum_all(square(fully_connected(l[0], l[1], l[2])));
        },
        inputs);
    CHECK(rel < 1e-5);
}

TEST_CASE("matmul rejects inner-dimension mismatch") {
    Tape tape;
    Var a = tape.constant(Tensor({2, 3}));
    Var b = tape.constant(Tensor({2, 3}));
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("relu values") {
    Tape tape;
    Var out = relu(tape.constant(Tensor::from({2}, {-1.0, 2.0})));
    CHECK(out.value()[0] == 0.0);
    CHECK(out.value()[1] == 2.0);
}

TEST_CASE("softmax of uniform logits is uniform") {
    Tape tape;
    Var out = softmax(tape.constant(Tensor({8}, 0.42)), 0);
    for (int i = 0; i < 8; ++i) CHECK(out.value()[i] == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("softmax sums to one along the chosen axis") {
    Rng rng(59);
    Tensor in = randn({3, 5}, rng, 4.0);
    Tape tape;
    Var out = softmax(tape.constant(in), 1);
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) s += out.value().at2(i, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax and tanh gradients match finite differences") {
    Rng rng(61);
    std::vector<Tensor> inputs = {randn({6}, rng)};
    double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) {
            Var p = softmax(l[0], 0);
            return sum_all(mul(p, p));  // non-trivial functional of the probabilities
        },
        inputs);
    CHECK(rel < 1e-6);
    rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) { return sum_all(square(tanh_op(l[0]))); }, inputs);
    CHECK(rel < 1e-6);
}

TEST_CASE("relu gradient away from the kink matches finite differences") {
    Rng rng(67);
    Tensor in = randn({12}, rng);
    for (std::int64_t i = 0; i < in.size(); ++i)
        if (std::abs(in[i]) < 0.05) in[i] = in[i] < 0 ? -0.1 : 0.1;  // keep clear of the kink
    const double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) { return sum_all(square(relu(l[0]))); }, {in});
    CHECK(rel < 1e-6);
}

TEST_CASE("logsumexp agrees with the direct sum") {
    Rng rng(71);
    Tensor in = randn({7}, rng, 3.0);
    double direct = 0.0;
    for (int i = 0; i < 7; ++i) direct += std::exp(in[i]);
    direct = std::log(direct);
    Tape tape;
    Var out = logsumexp(tape.leaf(in, true));
    CHECK(out.value()[0] == doctest::Approx(direct).epsilon(1e-12));
    const double rel = fd::rel_error(
        [](Tape&, const std::vector<Var>& l) { return logsumexp(l[0]); }, {in});
    CHECK(rel < 1e-6);
}

TEST_CASE("backward of a sum equals the sum of backward passes") {
    Rng rng(73);
    Tensor x = randn({5}, rng);
    auto grads_of = [&x](bool first, bool second) {
        Tape tape;
        Var leaf = tape.leaf(x, true);
        Var a = sum_all(square(leaf));
        Var b = sum_all(mul(leaf, tanh_op(leaf)));
        Var loss = first && second ? add(a, b) : (first ? a : b);
        tape.backward(loss.id);
        return tape.grad(leaf.id);
    };
    const Tensor combined = grads_of(true, true);
    const Tensor ga = grads_of(true, false);
    const Tensor gb = grads_of(false, true);
    for (int i = 0; i < 5; ++i) CHECK(combined[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
}

TEST_CASE("forward passes are bit-identical across repeats") {
    auto run = [] {
        Rng rng(79);
        Tensor in = randn({2, 2, 4, 4}, rng);
        Tensor ker = randn({3, 2, 3, 3}, rng);
        Tape tape;
        Var out = conv2d(tape.constant(in), tape.constant(ker), 1, 1);
        return out.value();
    };
    const Tensor a = run();
    const Tensor b = run();
    REQUIRE(a.same_shape(b));
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("reshape, slice and select round-trip values and gradients") {
    Rng rng(83);
    Tensor in = randn({2, 6}, rng);
    Tape tape;
    Var leaf = tape.leaf(in, true);
    Var r = reshape(leaf, {3, 4});
    CHECK(r.value().at2(2, 3) == in.at2(1, 5));
    Var row = slice0(r, 1, 1);
    CHECK(row.value()[0] == r.value().at2(1, 0));
    Var flat = reshape(row, {4});
    Var picked = select(flat, 2);
    tape.backward(picked.id);
    const Tensor& g = tape.grad(leaf.id);
    for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == (i == 6 ? 1.0 : 0.0));
}

TEST_CASE("sum_rows reduces each row") {
    Tensor in = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tape tape;
    Var out = sum_rows(tape.constant(in));
    CHECK(out.value()[0] == 6.0);
    CHECK(out.value()[1] == 15.0);
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
    Adam adam;
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5});
    const Tensor before = p;
    adam.update(p, Tensor({3}));
    CHECK(max_abs_diff(p, before) == 0.0);
}

TEST_CASE("adam first step magnitude approximates the learning rate") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam adam(cfg);
    Tensor p = Tensor::from({1}, {0.0});
    adam.update(p, Tensor::from({1}, {1.0}));
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam descends the quadratic bowl") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.beta1 = 0.5;
    Adam adam(cfg);
    Tensor x = Tensor::from({1}, {3.0});
    for (int step = 0; step < 200; ++step) {
        Tape tape;
        Var p = tape.param(x);
        Var loss = sum_all(square(p));
        tape.backward(loss.id);
        adam.step(tape);
    }
    CHECK(std::abs(x[0]) < 1e-2);
}

TEST_CASE("adam via tape bindings updates every parameter") {
    Adam adam;
    Rng rng(89);
    Tensor w = randn({2, 2}, rng);
    Tensor b = randn({2}, rng);
    const Tensor w0 = w, b0 = b;
    Tape tape;
    Var in = tape.constant(Tensor::from({1, 2}, {1.0, 2.0}));
    Var loss = sum_all(square(fully_connected(in, tape.param(w), tape.param(b))));
    tape.backward(loss.id);
    CHECK(tape.grad_for(&w) != nullptr);
    adam.step(tape);
    CHECK(max_abs_diff(w, w0) > 0.0);
    CHECK(max_abs_diff(b, b0) > 0.0);
}

#include "chroma/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "chroma/colorspace.hpp"
#include "chroma/error.hpp"
#include "chroma/losses.hpp"
#include "chroma/mdn.hpp"
#include "chroma/pca.hpp"
#include "chroma/rng.hpp"
#include "chroma/tape.hpp"

namespace chroma {

namespace {

constexpr double kTolerance = 1e-4;

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double run_once(const Builder& build, const std::vector<Tensor>& inputs, bool with_grad,
                std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, with_grad));
    Var loss = build(tape, leaves);
    const double value = loss.value()[0];
    if (with_grad) {
        tape.backward(loss.id);
        grads->clear();
        for (Var l : leaves) {
            const Tensor& g = tape.grad(l.id);
            grads->push_back(g.empty() ? Tensor(l.value().shape()) : g);
        }
    }
    return value;
}

// Worst coordinate of |analytic - central difference|, relative to the
// larger of one and the gradient magnitudes involved.
double rel_error(const Builder& build, std::vector<Tensor> inputs, double h = 1e-5) {
    std::vector<Tensor> analytic;
    run_once(build, inputs, true, &analytic);
    double scale = 1.0, worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::int64_t c = 0; c < inputs[i].size(); ++c) {
            const double orig = inputs[i][c];
            inputs[i][c] = orig + h;
            const double up = run_once(build, inputs, false, nullptr);
            inputs[i][c] = orig - h;
            const double down = run_once(build, inputs, false, nullptr);
            inputs[i][c] = orig;
            const double numeric = (up - down) / (2.0 * h);
            scale = std::max({scale, std::abs(numeric), std::abs(analytic[i][c])});
            worst = std::max(worst, std::abs(numeric - analytic[i][c]));
        }
    return worst / scale;
}

Tensor uniform_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

// Values bounded away from zero, so rectifier kinks stay out of the
// difference stencil.
Tensor offset_tensor(Rng& rng, std::vector<int> shape, double margin = 0.05) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const double magnitude = margin + rng.uniform();
        t[i] = rng.uniform() < 0.5 ? -magnitude : magnitude;
    }
    return t;
}

ColorField random_target(Rng& rng, int f) {
    ColorField field{uniform_tensor(rng, {2, f, f}, -0.85, 0.85), Tensor({f, f})};
    return field;
}

struct Check {
    std::string name;
    std::function<double(Rng&)> trial;  // one random problem -> worst rel error
};

std::vector<Check> conv_checks() {
    std::vector<Check> checks;

    checks.push_back({"conv2d", [](Rng& rng) {
        const int stride = 1 + rng.below(2), pad = rng.below(2);
        const int in_ch = 1 + rng.below(2), out_ch = 1 + rng.below(2), k = 2 + rng.below(2);
        const int h = k + 2 + rng.below(3);
        std::vector<Tensor> inputs{uniform_tensor(rng, {2, in_ch, h, h}, -1, 1),
                                   uniform_tensor(rng, {out_ch, in_ch, k, k}, -1, 1),
                                   uniform_tensor(rng, {out_ch}, -1, 1)};
        return rel_error(
            [=](Tape&, const std::vector<Var>& v) {
                return sum_all(square(bias_channel(conv2d(v[0], v[1], stride, pad), v[2])));
            },
            inputs);
    }});

    checks.push_back({"padded_conv", [](Rng& rng) {
        const int k = 4 + rng.below(2);  // the two decoder kernel widths
        const int near = (k - 1) / 2, far = k / 2;
        std::vector<Tensor> inputs{uniform_tensor(rng, {1, 2, 5, 5}, -1, 1),
                                   uniform_tensor(rng, {2, 2, k, k}, -1, 1)};
        return rel_error(
            [=](Tape&, const std::vector<Var>& v) {
                return sum_all(square(conv2d(zero_pad2d(v[0], near, far, near, far), v[1], 1, 0)));
            },
            inputs);
    }});

    checks.push_back({"bilinear_upsample", [](Rng& rng) {
        const int factor = 2 + rng.below(3);
        std::vector<Tensor> inputs{uniform_tensor(rng, {1, 2, 3, 3}, -1, 1)};
        return rel_error(
            [=](Tape&, const std::vector<Var>& v) {
                return sum_all(square(bilinear_upsample(v[0], factor)));
            },
            inputs);
    }});

    checks.push_back({"batchnorm_train", [](Rng& rng) {
        std::vector<Tensor> inputs{uniform_tensor(rng, {4, 2, 3, 3}, -1, 1),
                                   uniform_tensor(rng, {2}, 0.5, 1.5),
                                   uniform_tensor(rng, {2}, -0.5, 0.5)};
        return rel_error(
            [](Tape&, const std::vector<Var>& v) {
                BatchNormStats stats;
                return sum_all(square(batchnorm(v[0], v[1], v[2], stats, BatchNormMode::train)));
            },
            inputs);
    }});

    checks.push_back({"fully_connected", [](Rng& rng) {
        std::vector<Tensor> inputs{uniform_tensor(rng, {3, 4}, -1, 1),
                                   uniform_tensor(rng, {4, 2}, -1, 1),
                                   uniform_tensor(rng, {2}, -1, 1)};
        return rel_error(
            [](Tape&, const std::vector<Var>& v) {
                return sum_all(square(fully_connected(v[0], v[1], v[2])));
            },
            inputs);
    }});

    checks.push_back({"relu_tanh_chain", [](Rng& rng) {
        std::vector<Tensor> inputs{offset_tensor(rng, {6})};
        return rel_error(
            [](Tape&, const std::vector<Var>& v) {
                return sum_all(mul(relu(v[0]), tanh_op(v[0])));
            },
            inputs);
    }});

    checks.push_back({"softmax_logsumexp", [](Rng& rng) {
        const int pick = rng.below(5);
        std::vector<Tensor> inputs{uniform_tensor(rng, {5}, -2, 2)};
        return rel_error(
            [=](Tape&, const std::vector<Var>& v) {
                Var soft = select(softmax(v[0], 0), pick);
                return add(log_op(soft), logsumexp(v[0]));
            },
            inputs);
    }});

    checks.push_back({"forward_diff", [](Rng& rng) {
        const int axis = 1 + rng.below(2);
        std::vector<Tensor> inputs{uniform_tensor(rng, {2, 4, 4}, -1, 1)};
        return rel_error(
            [=](Tape&, const std::vector<Var>& v) {
                return sum_all(square(forward_diff(v[0], axis)));
            },
            inputs);
    }});

    return checks;
}

std::vector<Check> loss_checks() {
    std::vector<Check> checks;
    const int f = 8;

    checks.push_back({"loss_mah", [](Rng& rng) {
        std::vector<ColorField> corpus;
        for (int i = 0; i < 6; ++i) corpus.push_back(random_target(rng, 8));
        const PcaBasis basis = pca_fit_fields(corpus, 3);
        const ColorField target = random_target(rng, 8);
        std::vector<Tensor> inputs{uniform_tensor(rng, {2, 8, 8}, -0.9, 0.9)};
        return rel_error(
            [&](Tape&, const std::vector<Var>& v) { return loss_mah(v[0], target, basis); },
            inputs);
    }});

    checks.push_back({"loss_hist", [f](Rng& rng) {
        std::vector<ColorField> corpus;
        for (int i = 0; i < 4; ++i) corpus.push_back(random_target(rng, f));
        const AbHistogram hist = build_histogram(corpus);
        const ColorField target = corpus.front();
        std::vector<Tensor> inputs{uniform_tensor(rng, {2, f, f}, -0.9, 0.9)};
        return rel_error(
            [&](Tape&, const std::vector<Var>& v) { return loss_hist(v[0], target, hist); },
            inputs);
    }});

    checks.push_back({"loss_grad", [f](Rng& rng) {
        const ColorField target = random_target(rng, f);
        std::vector<Tensor> inputs{uniform_tensor(rng, {2, f, f}, -0.9, 0.9)};
        return rel_error(
            [&](Tape&, const std::vector<Var>& v) { return loss_grad(v[0], target); }, inputs);
    }});

    checks.push_back({"loss_kl", [](Rng& rng) {
        std::vector<Tensor> inputs{uniform_tensor(rng, {3, 4}, -1, 1),
                                   uniform_tensor(rng, {3, 4}, -1.5, 1.5)};
        return rel_error(
            [](Tape&, const std::vector<Var>& v) { return loss_kl(v[0], v[1]); }, inputs);
    }});

    checks.push_back({"loss_dec", [f](Rng& rng) {
        std::vector<ColorField> corpus;
        for (int i = 0; i < 6; ++i) corpus.push_back(random_target(rng, f));
        const PcaBasis basis = pca_fit_fields(corpus, 2);
        const AbHistogram hist = build_histogram(corpus);
        const LossWeights weights;
        const ColorField target = corpus.back();
        std::vector<Tensor> inputs{uniform_tensor(rng, {2, f, f}, -0.9, 0.9)};
        return rel_error(
            [&](Tape&, const std::vector<Var>& v) {
                return loss_dec(v[0], target, basis, hist, weights);
            },
            inputs);
    }});

    return checks;
}

std::vector<Check> mdn_checks() {
    std::vector<Check> checks;

    checks.push_back({"mdn_exact", [](Rng& rng) {
        const int m = 2 + rng.below(3), d = 2 + rng.below(2);
        Tensor z = uniform_tensor(rng, {d}, -1, 1);
        std::vector<Tensor> inputs{uniform_tensor(rng, {m}, 0.1, 1.0),
                                   uniform_tensor(rng, {m, d}, -1, 1)};
        return rel_error(
            [&](Tape&, const std::vector<Var>& v) {
                return mdn_loss_exact(v[0], v[1], z, 0.1);
            },
            inputs);
    }});

    checks.push_back({"mdn_min", [](Rng& rng) {
        const int m = 2 + rng.below(3), d = 2;
        const Tensor z = uniform_tensor(rng, {d}, -1, 1);
        // Means are redrawn until the closest two distances are well
        // separated, so the argmin cannot flip inside the stencil.
        Tensor mu;
        for (;;) {
            mu = uniform_tensor(rng, {m, d}, -2, 2);
            std::vector<double> dist;
            for (int i = 0; i < m; ++i) {
                double sq = 0;
                for (int j = 0; j < d; ++j) {
                    const double delta = mu.at2(i, j) - z[j];
                    sq += delta * delta;
                }
                dist.push_back(std::sqrt(sq));
            }
            std::sort(dist.begin(), dist.end());
            if (m == 1 || dist[1] - dist[0] > 0.1) break;
        }
        std::vector<Tensor> inputs{uniform_tensor(rng, {m}, 0.1, 1.0), mu};
        return rel_error(
            [&](Tape&, const std::vector<Var>& v) { return mdn_loss_min(v[0], v[1], z, 0.1); },
            inputs);
    }});

    return checks;
}

}  // namespace

GradcheckReport gradcheck(const std::string& suite, int trials, std::uint64_t seed,
                          std::ostream* log) {
    if (trials < 1) throw UsageError("gradcheck: trials must be >= 1");
    std::vector<Check> checks;
    auto append = [&](std::vector<Check> more) {
        for (Check& c : more) checks.push_back(std::move(c));
    };
    if (suite == "conv" || suite == "all") append(conv_checks());
    if (suite == "losses" || suite == "all") append(loss_checks());
    if (suite == "mdn" || suite == "all") append(mdn_checks());
    if (checks.empty())
        throw UsageError("gradcheck: unknown suite '" + suite + "' (conv, losses, mdn, all)");

    GradcheckReport report;
    report.checks = static_cast<int>(checks.size());
    Rng rng(seed);
    for (const Check& check : checks) {
        double check_worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            double err = check.trial(rng);
            if (err > kTolerance) err = check.trial(rng);  // kink-collision retry
            ++report.trials;
            check_worst = std::max(check_worst, err);
            if (err > kTolerance) {
                ++report.failures;
                std::ostringstream note;
                note << check.name << " trial " << t << " rel error " << err;
                report.failure_notes.push_back(note.str());
            }
        }
        report.worst_rel = std::max(report.worst_rel, check_worst);
        if (log)
            *log << "gradcheck " << check.name << " trials " << trials << " worst " << check_worst
                 << (check_worst > kTolerance ? " FAIL" : " ok") << '\n';
    }
    return report;
}

}  // namespace chroma

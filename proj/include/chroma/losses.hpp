#pragma once

#include "chroma/colorspace.hpp"
#include "chroma/pca.hpp"
#include "chroma/tape.hpp"

namespace chroma {

struct LossWeights {
    double lambda_mah = 0.1;
    double lambda_grad = 1e-3;
    double kl_weight = 1e-2;
};

// All losses take the prediction as a live (2, H, W) graph node; targets,
// bases and histograms enter as constants, so gradients flow to the
// prediction only. Each is a sum (not mean) over pixels — the default
// lambda weights assume that reduction.

// Specificity: squared projections onto the principal directions scaled by
// inverse variance, plus the residual scaled by the last component's variance.
Var loss_mah(Var pred, const ColorField& target, const PcaBasis& basis);

// Colorfulness: squared error per pixel, weighted by the inverse empirical
// probability of the target pixel's color bin.
Var loss_hist(Var pred, const ColorField& target, const AbHistogram& hist);

// Gradient: squared error of horizontal and vertical forward differences.
Var loss_grad(Var pred, const ColorField& target);

// Combined decoder objective: L_hist + lambda_mah*L_mah + lambda_grad*L_grad.
Var loss_dec(Var pred, const ColorField& target, const PcaBasis& basis, const AbHistogram& hist,
             const LossWeights& weights);

// KL divergence of N(mu, exp(logvar)) from the standard normal.
Var loss_kl(Var mu, Var logvar);

}  // namespace chroma

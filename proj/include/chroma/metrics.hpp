// Evaluation metrics over normalized ab fields: plain and
// colorfulness-weighted per-pixel errors (over all pixels or a coarse
// central lattice), the best error across a set of diverse predictions,
// and the spread of that set.
#pragma once

#include <string>
#include <vector>

#include "chroma/colorspace.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

// Pixel selection for the error metrics: every pixel, or an 8x8 lattice
// evenly spaced over the central half-size window.
enum class EvalMode { all, grid };

// Mean of |delta a| and |delta b| over the selected pixels.
double mae(const ColorField& pred, const ColorField& target, EvalMode mode);

// Same, but each pixel's contribution is scaled by the inverse-frequency
// weight of the target pixel's color bin. Still normalized by pixel count,
// so a unit-weight histogram reproduces `mae` exactly.
double weighted_mae(const ColorField& pred, const ColorField& target, const AbHistogram& hist,
                    EvalMode mode);

// Minimum over the predictions of mae(pred, target, all).
double error_of_best(const std::vector<ColorField>& preds, const ColorField& target);

// Population variance across the predictions, computed per pixel and
// channel, then averaged over all of them.
double diversity_variance(const std::vector<ColorField>& preds);

struct ImageEval {
    std::string name;
    double mae_all = 0, mae_grid = 0, wae_all = 0, wae_grid = 0;
    double eob = 0, variance = 0;
};

// Corpus-level means of every column plus the per-image breakdown.
struct EvalReport {
    double mae_all = 0, mae_grid = 0, wae_all = 0, wae_grid = 0;
    double eob = 0, variance = 0;
    std::vector<ImageEval> images;
};

EvalReport make_report(std::vector<ImageEval> images);

// One "key value" line per aggregate field.
std::string report_to_kv(const EvalReport& report);

// Header line plus one row per image.
std::string report_to_csv(const EvalReport& report);

}  // namespace chroma

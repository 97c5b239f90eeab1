#include "chroma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "chroma/error.hpp"

namespace chroma {

namespace {

void check_pair(const ColorField& pred, const ColorField& target, const char* who) {
    if (pred.ab.ndim() != 3 || pred.ab.extent(0) != 2)
        throw ShapeError(std::string(who) + ": prediction ab has shape " +
                         Tensor::shape_str(pred.ab.shape()));
    if (!pred.ab.same_shape(target.ab))
        throw ShapeError(std::string(who) + ": prediction is " +
                         Tensor::shape_str(pred.ab.shape()) + " but target is " +
                         Tensor::shape_str(target.ab.shape()));
}

// Eight indices evenly spaced across the central half of one axis.
std::vector<int> lattice(int extent) {
    const int window = extent / 2;
    const int start = (extent - window) / 2;
    std::vector<int> idx(8);
    for (int i = 0; i < 8; ++i)
        idx[static_cast<std::size_t>(i)] =
            start + static_cast<int>(std::lround(i * (window - 1) / 7.0));
    return idx;
}

std::vector<std::pair<int, int>> selected_pixels(int h, int w, EvalMode mode) {
    std::vector<std::pair<int, int>> pixels;
    if (mode == EvalMode::all) {
        pixels.reserve(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) pixels.emplace_back(y, x);
    } else {
        const std::vector<int> ys = lattice(h), xs = lattice(w);
        for (int y : ys)
            for (int x : xs) pixels.emplace_back(y, x);
    }
    return pixels;
}

double pixel_error_mean(const ColorField& pred, const ColorField& target,
                        const AbHistogram* hist, EvalMode mode) {
    const int h = pred.ab.extent(1), w = pred.ab.extent(2);
    const std::vector<std::pair<int, int>> pixels = selected_pixels(h, w, mode);
    double sum = 0.0;
    for (const auto& [y, x] : pixels) {
        const double da = std::abs(pred.ab.at3(0, y, x) - target.ab.at3(0, y, x));
        const double db = std::abs(pred.ab.at3(1, y, x) - target.ab.at3(1, y, x));
        const double weight =
            hist ? hist->weight(target.ab.at3(0, y, x), target.ab.at3(1, y, x)) : 1.0;
        sum += weight * (da + db);
    }
    return sum / (2.0 * static_cast<double>(pixels.size()));
}

}  // namespace

double mae(const ColorField& pred, const ColorField& target, EvalMode mode) {
    check_pair(pred, target, "mae");
    return pixel_error_mean(pred, target, nullptr, mode);
}

double weighted_mae(const ColorField& pred, const ColorField& target, const AbHistogram& hist,
                    EvalMode mode) {
    check_pair(pred, target, "weighted_mae");
    return pixel_error_mean(pred, target, &hist, mode);
}

double error_of_best(const std::vector<ColorField>& preds, const ColorField& target) {
    if (preds.empty()) throw DataError("error_of_best: empty prediction list");
    double best = mae(preds.front(), target, EvalMode::all);
    for (std::size_t i = 1; i < preds.size(); ++i)
        best = std::min(best, mae(preds[i], target, EvalMode::all));
    return best;
}

double diversity_variance(const std::vector<ColorField>& preds) {
    if (preds.empty()) throw DataError("diversity_variance: empty prediction list");
    const Tensor& first = preds.front().ab;
    if (first.ndim() != 3 || first.extent(0) != 2)
        throw ShapeError("diversity_variance: prediction ab has shape " +
                         Tensor::shape_str(first.shape()));
    for (const ColorField& p : preds)
        if (!p.ab.same_shape(first))
            throw ShapeError("diversity_variance: mixed prediction shapes " +
                             Tensor::shape_str(first.shape()) + " and " +
                             Tensor::shape_str(p.ab.shape()));
    const std::int64_t cells = first.size();
    const double n = static_cast<double>(preds.size());
    double total = 0.0;
    for (std::int64_t i = 0; i < cells; ++i) {
        double lo = preds.front().ab[i], hi = lo, sum = 0.0;
        for (const ColorField& p : preds) {
            lo = std::min(lo, p.ab[i]);
            hi = std::max(hi, p.ab[i]);
            sum += p.ab[i];
        }
        if (lo == hi) continue;  // exact zero spread, skip the rounding noise
        const double mean = sum / n;
        double sq = 0.0;
        for (const ColorField& p : preds) sq += (p.ab[i] - mean) * (p.ab[i] - mean);
        total += sq / n;
    }
    return total / static_cast<double>(cells);
}

EvalReport make_report(std::vector<ImageEval> images) {
    if (images.empty()) throw DataError("make_report: no evaluated images");
    EvalReport report;
    for (const ImageEval& img : images) {
        report.mae_all += img.mae_all;
        report.mae_grid += img.mae_grid;
        report.wae_all += img.wae_all;
        report.wae_grid += img.wae_grid;
        report.eob += img.eob;
        report.variance += img.variance;
    }
    const double n = static_cast<double>(images.size());
    report.mae_all /= n;
    report.mae_grid /= n;
    report.wae_all /= n;
    report.wae_grid /= n;
    report.eob /= n;
    report.variance /= n;
    report.images = std::move(images);
    return report;
}

std::string report_to_kv(const EvalReport& report) {
    std::ostringstream out;
    out << std::setprecision(12);
    out << "mae_all " << report.mae_all << '\n'
        << "mae_grid " << report.mae_grid << '\n'
        << "wae_all " << report.wae_all << '\n'
        << "wae_grid " << report.wae_grid << '\n'
        << "eob " << report.eob << '\n'
        << "variance " << report.variance << '\n';
    return out.str();
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream out;
    out << std::setprecision(12);
    out << "image,mae_all,mae_grid,wae_all,wae_grid,eob,variance\n";
    for (const ImageEval& img : report.images)
        out << img.name << ',' << img.mae_all << ',' << img.mae_grid << ',' << img.wae_all << ','
            << img.wae_grid << ',' << img.eob << ',' << img.variance << '\n';
    return out.str();
}

}  // namespace chroma

#include "chroma/kmeans.hpp"

#include <limits>

#include "chroma/error.hpp"

namespace chroma {

namespace {

double sq_dist(const Tensor& data, int row, const Tensor& centers, int center) {
    const int d = data.extent(1);
    double sq = 0;
    for (int j = 0; j < d; ++j) {
        const double diff = data.at2(row, j) - centers.at2(center, j);
        sq += diff * diff;
    }
    return sq;
}

int nearest_center(const Tensor& data, int row, const Tensor& centers) {
    const int k = centers.extent(0);
    int best = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
        const double sq = sq_dist(data, row, centers, c);
        if (sq < best_sq) {  // strict < keeps the lowest index on ties
            best_sq = sq;
            best = c;
        }
    }
    return best;
}

void copy_row(const Tensor& data, int row, Tensor& centers, int center) {
    for (int j = 0; j < data.extent(1); ++j) centers.at2(center, j) = data.at2(row, j);
}

// k-means++: the first center is uniform, each later one is drawn with
// probability proportional to the squared distance from the chosen set.
Tensor seed_centers(const Tensor& data, int k, Rng& rng) {
    const int n = data.extent(0);
    Tensor centers({k, data.extent(1)});
    copy_row(data, static_cast<int>(rng.below(static_cast<std::uint64_t>(n))), centers, 0);
    std::vector<double> dist_sq(static_cast<std::size_t>(n));
    for (int c = 1; c < k; ++c) {
        double total = 0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int prev = 0; prev < c; ++prev)
                best = std::min(best, sq_dist(data, i, centers, prev));
            dist_sq[static_cast<std::size_t>(i)] = best;
            total += best;
        }
        int pick;
        if (total > 0) {
            const double u = rng.uniform() * total;
            double run = 0;
            pick = n - 1;  // guards against accumulated rounding at the top end
            for (int i = 0; i < n; ++i) {
                run += dist_sq[static_cast<std::size_t>(i)];
                if (u < run) {
                    pick = i;
                    break;
                }
            }
        } else {
            // Every sample coincides with a chosen center; any row works.
            pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        }
        copy_row(data, pick, centers, c);
    }
    return centers;
}

}  // namespace

KmeansResult kmeans(const Tensor& data, int k, Rng& rng, int max_iters) {
    if (data.ndim() != 2) throw ShapeError("kmeans: data must be (n, d)");
    const int n = data.extent(0), d = data.extent(1);
    if (n < 1) throw DataError("kmeans: no samples");
    if (k < 1 || k > n)
        throw UsageError("kmeans: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) +
                         "]");

    KmeansResult result;
    result.centers = seed_centers(data, k, rng);
    result.assignment.assign(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            const int c = nearest_center(data, i, result.centers);
            if (c != result.assignment[static_cast<std::size_t>(i)]) {
                result.assignment[static_cast<std::size_t>(i)] = c;
                changed = true;
            }
        }
        if (!changed) break;
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        Tensor sums({k, d});
        for (int i = 0; i < n; ++i) {
            const int c = result.assignment[static_cast<std::size_t>(i)];
            ++count[static_cast<std::size_t>(c)];
            for (int j = 0; j < d; ++j) sums.at2(c, j) += data.at2(i, j);
        }
        for (int c = 0; c < k; ++c) {
            if (count[static_cast<std::size_t>(c)] == 0) continue;  // empty: keep old center
            for (int j = 0; j < d; ++j)
                result.centers.at2(c, j) = sums.at2(c, j) / count[static_cast<std::size_t>(c)];
        }
    }
    return result;
}

}  // namespace chroma

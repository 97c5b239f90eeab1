#include "chroma/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chroma/error.hpp"

namespace chroma {

EigenResult symmetric_eigen(const Tensor& m) {
    if (m.ndim() != 2 || m.extent(0) != m.extent(1)) throw ShapeError("symmetric_eigen: matrix must be square");
    const int n = m.extent(0);
    Tensor a = m;
    Tensor v({n, n});
    for (int i = 0; i < n; ++i) v.at2(i, i) = 1.0;

    double frob = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) frob += a[i] * a[i];
    const double stop = 1e-28 * std::max(frob, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a.at2(p, q) * a.at2(p, q);
        if (off <= stop) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a.at2(p, q);
                if (apq == 0.0) continue;
                const double theta = (a.at2(q, q) - a.at2(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a.at2(i, p), aiq = a.at2(i, q);
                    a.at2(i, p) = c * aip - s * aiq;
                    a.at2(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a.at2(p, i), aqi = a.at2(q, i);
                    a.at2(p, i) = c * api - s * aqi;
                    a.at2(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = v.at2(i, p), viq = v.at2(i, q);
                    v.at2(i, p) = c * vip - s * viq;
                    v.at2(i, q) = s * vip + c * viq;
                }
            }
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&a](int x, int y) { return a.at2(x, x) > a.at2(y, y); });

    EigenResult r;
    r.values = Tensor({n});
    r.vectors = Tensor({n, n});
    for (int i = 0; i < n; ++i) {
        r.values[i] = a.at2(order[i], order[i]);
        for (int j = 0; j < n; ++j) r.vectors.at2(i, j) = v.at2(j, order[i]);
    }
    return r;
}

Tensor flatten_field(const ColorField& field) {
    return field.ab.reshaped({static_cast<int>(field.ab.size())});
}

namespace {

void fix_sign(Tensor& components) {
    const int k = components.extent(0), d = components.extent(1);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j) {
            if (std::abs(components.at2(i, j)) <= 1e-12) continue;
            if (components.at2(i, j) < 0.0)
                for (int jj = 0; jj < d; ++jj) components.at2(i, jj) = -components.at2(i, jj);
            break;
        }
}

}  // namespace

PcaBasis pca_fit(const std::vector<Tensor>& samples, int k) {
    if (k < 1) throw UsageError("pca: k must be >= 1");
    const int n = static_cast<int>(samples.size());
    if (n < k + 1)
        throw DataError("pca: need at least " + std::to_string(k + 1) + " samples for k=" + std::to_string(k) +
                        ", got " + std::to_string(n));
    const int d = static_cast<int>(samples[0].size());
    for (const Tensor& s : samples)
        if (static_cast<int>(s.size()) != d) throw ShapeError("pca: samples of mixed dimension");

    PcaBasis basis;
    basis.mean = Tensor({d});
    for (const Tensor& s : samples)
        for (int j = 0; j < d; ++j) basis.mean[j] += s[j];
    for (int j = 0; j < d; ++j) basis.mean[j] /= n;

    Tensor x({n, d});  // centered samples
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x.at2(i, j) = samples[static_cast<std::size_t>(i)][j] - basis.mean[j];

    Tensor eigvals, dirs;  // dirs: (count, d) unit directions, descending variance
    const double denom = static_cast<double>(n - 1);
    if (d <= n) {
        Tensor cov({d, d});
        matmul_tn_accum(x.data(), x.data(), cov.data(), d, n, d);
        for (std::int64_t i = 0; i < cov.size(); ++i) cov[i] /= denom;
        EigenResult eig = symmetric_eigen(cov);
        eigvals = eig.values;
        dirs = eig.vectors;
    } else {
        // Gram trick: eigenvectors of X Xᵀ / (n-1) lift to covariance
        // eigenvectors through Xᵀ, covering at most n-1 nonzero directions.
        Tensor gram({n, n});
        matmul_nt_accum(x.data(), x.data(), gram.data(), n, d, n);
        for (std::int64_t i = 0; i < gram.size(); ++i) gram[i] /= denom;
        EigenResult eig = symmetric_eigen(gram);
        eigvals = eig.values;
        dirs = Tensor({n, d});
        for (int i = 0; i < n; ++i) {
            for (int r = 0; r < n; ++r) {
                const double w = eig.vectors.at2(i, r);
                for (int j = 0; j < d; ++j) dirs.at2(i, j) += w * x.at2(r, j);
            }
            double norm = 0.0;
            for (int j = 0; j < d; ++j) norm += dirs.at2(i, j) * dirs.at2(i, j);
            norm = std::sqrt(norm);
            if (norm > 0.0)
                for (int j = 0; j < d; ++j) dirs.at2(i, j) /= norm;
        }
    }

    const double lead = std::max(eigvals[0], 0.0);
    int attainable = 0;
    while (attainable < eigvals.extent(0) && eigvals[attainable] > std::max(1e-12, lead * 1e-10)) ++attainable;
    if (attainable < k)
        throw DataError("pca: corpus supports only " + std::to_string(attainable) +
                        " components, requested k=" + std::to_string(k));

    basis.components = Tensor({k, d});
    basis.sigmas = Tensor({k});
    for (int i = 0; i < k; ++i) {
        basis.sigmas[i] = std::sqrt(eigvals[i]);
        for (int j = 0; j < d; ++j) basis.components.at2(i, j) = dirs.at2(i, j);
    }
    fix_sign(basis.components);
    return basis;
}

PcaBasis pca_fit_fields(const std::vector<ColorField>& fields, int k) {
    std::vector<Tensor> flats;
    flats.reserve(fields.size());
    for (const ColorField& f : fields) flats.push_back(flatten_field(f));
    return pca_fit(flats, k);
}

PcaProjection pca_project(const PcaBasis& basis, const Tensor& flat) {
    if (static_cast<int>(flat.size()) != basis.dim())
        throw ShapeError("pca: field dimension " + std::to_string(flat.size()) + " does not match basis " +
                         std::to_string(basis.dim()));
    const int k = basis.k(), d = basis.dim();
    PcaProjection p;
    p.coeffs = Tensor({k});
    p.residual = Tensor({d});
    for (int j = 0; j < d; ++j) p.residual[j] = flat[j] - basis.mean[j];
    for (int i = 0; i < k; ++i) {
        double c = 0.0;
        for (int j = 0; j < d; ++j) c += basis.components.at2(i, j) * p.residual[j];
        p.coeffs[i] = c;
    }
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j) p.residual[j] -= p.coeffs[i] * basis.components.at2(i, j);
    return p;
}

}  // namespace chroma

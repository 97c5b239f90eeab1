#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/pca.hpp"
#include "chroma/rng.hpp"

using namespace chroma;

namespace {

// Independent eigendecomposition oracle: classical Jacobi with largest
// off-diagonal pivoting (the library uses cyclic sweeps instead).
void oracle_eigen(std::vector<std::vector<double>> a, std::vector<double>& vals,
                  std::vector<std::vector<double>>& vecs) {
    const int n = static_cast<int>(a.size());
    vecs.assign(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) vecs[i][i] = 1.0;
    for (int iter = 0; iter < 10000; ++iter) {
        int p = 0, q = 1;
        double biggest = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (std::abs(a[i][j]) > biggest) {
                    biggest = std::abs(a[i][j]);
                    p = i;
                    q = j;
                }
        if (biggest < 1e-15) break;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < n; ++i) {
            const double aip = a[i][p], aiq = a[i][q];
            a[i][p] = c * aip - s * aiq;
            a[i][q] = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
            const double api = a[p][i], aqi = a[q][i];
            a[p][i] = c * api - s * aqi;
            a[q][i] = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
            const double vip = vecs[i][p], viq = vecs[i][q];
            vecs[i][p] = c * vip - s * viq;
            vecs[i][q] = s * vip + c * viq;
        }
    }
    vals.resize(n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&a](int x, int y) { return a[x][x] > a[y][y]; });
    std::vector<std::vector<double>> sorted(n, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
        vals[i] = a[order[i]][order[i]];
        for (int j = 0; j < n; ++j) sorted[i][j] = vecs[j][order[i]];  // row i = eigenvector i
    }
    vecs = sorted;
}

std::vector<Tensor> random_samples(int n, int d, Rng& rng, double spread = 1.0) {
    std::vector<Tensor> s;
    for (int i = 0; i < n; ++i) s.push_back(randn({d}, rng, spread));
    return s;
}

void sign_normalize(std::vector<double>& v) {
    for (double x : v) {
        if (std::abs(x) <= 1e-12) continue;
        if (x < 0)
            for (double& y : v) y = -y;
        break;
    }
}

}  // namespace

TEST_CASE("degenerate line yields the diagonal direction and a rank error at k=2") {
    Rng rng(211);
    std::vector<Tensor> samples;
    for (int i = 0; i < 12; ++i) {
        const double t = rng.gaussian();
        samples.push_back(Tensor::from({2}, {t / std::sqrt(2.0), t / std::sqrt(2.0)}));
    }
    const PcaBasis basis = pca_fit(samples, 1);
    CHECK(std::abs(basis.components.at2(0, 0)) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
    CHECK(basis.components.at2(0, 0) == doctest::Approx(basis.components.at2(0, 1)).epsilon(1e-9));
    CHECK(basis.components.at2(0, 0) > 0.0);  // sign convention
    CHECK_THROWS_AS(pca_fit(samples, 2), DataError);
    try {
        pca_fit(samples, 2);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);  // attainable k reported
    }
}

TEST_CASE("fit matches the dense eigendecomposition oracle on 50x6 data") {
    Rng rng(223);
    std::vector<Tensor> samples = random_samples(50, 6, rng);
    const int k = 3;
    const PcaBasis basis = pca_fit(samples, k);

    // Oracle: explicit covariance then largest-pivot Jacobi.
    std::vector<double> mean(6, 0.0);
    for (const Tensor& s : samples)
        for (int j = 0; j < 6; ++j) mean[j] += s[j] / 50.0;
    std::vector<std::vector<double>> cov(6, std::vector<double>(6, 0.0));
    for (const Tensor& s : samples)
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / 49.0;
    std::vector<double> vals;
    std::vector<std::vector<double>> vecs;
    oracle_eigen(cov, vals, vecs);

    for (int i = 0; i < k; ++i) {
        CHECK(basis.sigmas[i] == doctest::Approx(std::sqrt(vals[i])).epsilon(1e-8));
        std::vector<double> expect = vecs[i];
        sign_normalize(expect);
        for (int j = 0; j < 6; ++j) CHECK(basis.components.at2(i, j) == doctest::Approx(expect[j]).epsilon(1e-7));
    }
}

TEST_CASE("gram-trick path (fewer samples than dimensions) matches direct covariance") {
    Rng rng(227);
    std::vector<Tensor> samples = random_samples(5, 9, rng);
    const PcaBasis basis = pca_fit(samples, 2);  // forces the n < d branch

    std::vector<double> mean(9, 0.0);
    for (const Tensor& s : samples)
        for (int j = 0; j < 9; ++j) mean[j] += s[j] / 5.0;
    std::vector<std::vector<double>> cov(9, std::vector<double>(9, 0.0));
    for (const Tensor& s : samples)
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j) cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / 4.0;
    std::vector<double> vals;
    std::vector<std::vector<double>> vecs;
    oracle_eigen(cov, vals, vecs);

    for (int i = 0; i < 2; ++i) {
        CHECK(basis.sigmas[i] == doctest::Approx(std::sqrt(vals[i])).epsilon(1e-8));
        std::vector<double> expect = vecs[i];
        sign_normalize(expect);
        for (int j = 0; j < 9; ++j) CHECK(basis.components.at2(i, j) == doctest::Approx(expect[j]).epsilon(1e-7));
    }
}

TEST_CASE("projecting the mean gives zero coefficients") {
    Rng rng(229);
    std::vector<Tensor> samples = random_samples(20, 5, rng);
    const PcaBasis basis = pca_fit(samples, 3);
    const PcaProjection p = pca_project(basis, basis.mean);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p.coeffs[i]) < 1e-10);
    for (int j = 0; j < 5; ++j) CHECK(std::abs(p.residual[j]) < 1e-10);
}

TEST_CASE("field = mean + 2 sigma1 P1 projects to (2 sigma1, 0, 0) with zero residual") {
    Rng rng(233);
    std::vector<Tensor> samples = random_samples(30, 4, rng);
    const PcaBasis basis = pca_fit(samples, 2);
    Tensor probe = basis.mean;
    for (int j = 0; j < 4; ++j) probe[j] += 2.0 * basis.components.at2(0, j);
    const PcaProjection p = pca_project(basis, probe);
    CHECK(p.coeffs[0] == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(std::abs(p.coeffs[1]) < 1e-10);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(p.residual[j]) < 1e-10);
}

TEST_CASE("reconstruction identity and residual orthogonality") {
    Rng rng(239);
    std::vector<Tensor> samples = random_samples(25, 7, rng);
    const PcaBasis basis = pca_fit(samples, 3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor probe = randn({7}, rng);
        const PcaProjection p = pca_project(basis, probe);
        for (int j = 0; j < 7; ++j) {
            double rebuilt = basis.mean[j] + p.residual[j];
            for (int i = 0; i < 3; ++i) rebuilt += p.coeffs[i] * basis.components.at2(i, j);
            CHECK(rebuilt == doctest::Approx(probe[j]).epsilon(1e-10));
        }
        for (int i = 0; i < 3; ++i) {
            double d = 0.0;
            for (int j = 0; j < 7; ++j) d += basis.components.at2(i, j) * p.residual[j];
            CHECK(std::abs(d) < 1e-8);
        }
    }
}

TEST_CASE("components are pairwise orthonormal") {
    Rng rng(241);
    std::vector<Tensor> samples = random_samples(40, 6, rng);
    const PcaBasis basis = pca_fit(samples, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double d = 0.0;
            for (int c = 0; c < 6; ++c) d += basis.components.at2(i, c) * basis.components.at2(j, c);
            CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) < 1e-8);
        }
}

TEST_CASE("sigmas are positive and non-increasing") {
    Rng rng(251);
    std::vector<Tensor> samples = random_samples(35, 8, rng);
    const PcaBasis basis = pca_fit(samples, 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(basis.sigmas[i] > 0.0);
        if (i > 0) CHECK(basis.sigmas[i] <= basis.sigmas[i - 1] + 1e-12);
    }
}

TEST_CASE("projection is linear in the field") {
    Rng rng(257);
    std::vector<Tensor> samples = random_samples(20, 5, rng);
    const PcaBasis basis = pca_fit(samples, 2);
    const Tensor x = randn({5}, rng), y = randn({5}, rng);
    const double a = 0.7, b = -1.3;
    Tensor combo({5});
    // Linearity holds for the centered map; keep the affine mean term balanced.
    for (int j = 0; j < 5; ++j) combo[j] = a * x[j] + b * y[j] + (1.0 - a - b) * basis.mean[j];
    const PcaProjection px = pca_project(basis, x);
    const PcaProjection py = pca_project(basis, y);
    const PcaProjection pc = pca_project(basis, combo);
    for (int i = 0; i < 2; ++i)
        CHECK(pc.coeffs[i] == doctest::Approx(a * px.coeffs[i] + b * py.coeffs[i]).epsilon(1e-9));
}

TEST_CASE("dimension mismatch is rejected") {
    Rng rng(263);
    std::vector<Tensor> samples = random_samples(10, 4, rng);
    const PcaBasis basis = pca_fit(samples, 2);
    CHECK_THROWS_AS(pca_project(basis, Tensor({6})), ShapeError);
}

TEST_CASE("too few samples for the requested k is rejected") {
    Rng rng(269);
    std::vector<Tensor> samples = random_samples(3, 5, rng);
    CHECK_THROWS_AS(pca_fit(samples, 3), DataError);
}

TEST_CASE("fields flatten to 2HW vectors for fitting") {
    Rng rng(271);
    std::vector<ColorField> fields;
    for (int i = 0; i < 8; ++i) {
        ColorField f;
        f.ab = randn({2, 2, 2}, rng, 0.3);
        f.L = Tensor({2, 2}, 50.0);
        fields.push_back(f);
    }
    const PcaBasis basis = pca_fit_fields(fields, 2);
    CHECK(basis.dim() == 8);
    CHECK(basis.k() == 2);
}

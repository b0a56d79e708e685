#include <algorithm>
#include <cmath>
#include <random>

#include "ahmood/errors.hpp"
#include "ahmood/linalg.hpp"
#include "doctest.h"

using namespace ahmood;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (double& v : m.values()) v = n(rng);
    return m;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double s = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
            out(i, j) = static_cast<double>(s);
        }
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

// Gauss-Jordan inverse with partial pivoting.
Matrix gauss_jordan_inverse(Matrix a) {
    const std::size_t n = a.rows();
    Matrix inv = Matrix::identity(n);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
        for (std::size_t k = 0; k < n; ++k) {
            std::swap(a(c, k), a(p, k));
            std::swap(inv(c, k), inv(p, k));
        }
        const double d = a(c, c);
        for (std::size_t k = 0; k < n; ++k) {
            a(c, k) /= d;
            inv(c, k) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a(r, c);
            for (std::size_t k = 0; k < n; ++k) {
                a(r, k) -= f * a(c, k);
                inv(r, k) -= f * inv(c, k);
            }
        }
    }
    return inv;
}

}  // namespace

TEST_CASE("matrix construction checks the data length") {
    CHECK_THROWS_AS(Matrix(2, 3, std::vector<double>(5)), ShapeError);
    const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
    CHECK(m(1, 0) == 3);
    CHECK(Matrix::identity(3)(2, 2) == 1);
}

TEST_CASE("matmul variants agree with the naive triple loop") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const std::size_t r = 1 + rng() % 7, k = 1 + rng() % 7, c = 1 + rng() % 7;
        const Matrix a = random_matrix(r, k, rng), b = random_matrix(k, c, rng);
        CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
        CHECK(max_abs_diff(matmul_bt(a, transpose(b)), naive_matmul(a, b)) < 1e-12);
        CHECK(max_abs_diff(matmul_at(transpose(a), b), naive_matmul(a, b)) < 1e-12);
    }
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("softmax is shift invariant and sums to one") {
    const Vector z{1000.0, 1001.0, 999.0};
    const Vector p = softmax(z);
    double s = 0;
    for (double v : p) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    const Vector q = softmax(Vector{0.0, 1.0, -1.0});
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-14));
    CHECK(logsumexp(Vector{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
    CHECK_THROWS(logsumexp(Vector{}));
}

TEST_CASE("l2 normalisation leaves zero rows alone") {
    const Matrix m = l2_normalize_rows(Matrix::from_rows({{3, 4}, {0, 0}}));
    CHECK(m(0, 0) == doctest::Approx(0.6));
    CHECK(m(1, 0) == 0.0);
    CHECK(m(1, 1) == 0.0);
}

TEST_CASE("jacobi eigendecomposition reconstructs random symmetric matrices") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n = 1 + rng() % 12;
        const Matrix b = random_matrix(n, n, rng);
        Matrix a = matmul_bt(b, b);
        const auto e = symmetric_eig(a);
        for (std::size_t i = 1; i < n; ++i) CHECK(e.eigenvalues[i - 1] >= e.eigenvalues[i]);
        Matrix lambda(n, n);
        for (std::size_t i = 0; i < n; ++i) lambda(i, i) = e.eigenvalues[i];
        const Matrix recon = matmul_bt(matmul(e.eigenvectors, lambda), e.eigenvectors);
        CHECK(max_abs_diff(recon, a) < 1e-9 * std::max(1.0, e.eigenvalues[0]));
        CHECK(max_abs_diff(matmul_at(e.eigenvectors, e.eigenvectors), Matrix::identity(n)) < 1e-10);
    }
    CHECK_THROWS_AS(symmetric_eig(Matrix::from_rows({{1, 2}, {0, 1}})), ContractError);
}

TEST_CASE("pseudo-inverse satisfies the Penrose identities on rank-deficient input") {
    std::mt19937_64 rng(3);
    const Matrix b = random_matrix(6, 3, rng);
    const Matrix a = matmul_bt(b, b);  // rank 3
    const Matrix p = symmetric_pinv(a);
    CHECK(max_abs_diff(matmul(matmul(a, p), a), a) < 1e-9);
    CHECK(max_abs_diff(matmul(matmul(p, a), p), p) < 1e-9);
}

TEST_CASE("mahalanobis matches a direct inverse") {
    std::mt19937_64 rng(5);
    const std::size_t d = 4, per_class = 15;
    Matrix x(3 * per_class, d);
    std::vector<int> labels;
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        labels.push_back(static_cast<int>(i / per_class));
        for (std::size_t j = 0; j < d; ++j) x(i, j) = n(rng) + 3.0 * labels.back() * (j == 0);
    }
    const auto g = fit_gaussian_stats(x, labels, 3);

    // Oracle: pooled covariance with 1/N divisor plus ridge, inverted by Gauss-Jordan.
    Matrix cov(d, d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto& mu = g.class_means[labels[i]];
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov(a, b) += (x(i, a) - mu[a]) * (x(i, b) - mu[b]);
    }
    for (double& v : cov.values()) v /= static_cast<double>(x.rows());
    for (std::size_t a = 0; a < d; ++a) cov(a, a) += kDefaultCovarianceRegularization;
    CHECK(max_abs_diff(cov, g.shared_covariance) < 1e-12);
    const Matrix inv = gauss_jordan_inverse(cov);
    CHECK(max_abs_diff(inv, g.precision) < 1e-9);

    const Vector q{0.3, -1.0, 2.0, 0.5};
    Vector diff(d);
    for (std::size_t a = 0; a < d; ++a) diff[a] = q[a] - g.class_means[1][a];
    double expected = 0;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) expected += diff[a] * inv(a, b) * diff[b];
    CHECK(mahalanobis_sq(q, g.class_means[1], g.precision) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("gaussian fit rejects tiny classes and bad labels") {
    const Matrix x = Matrix::from_rows({{0, 0}, {1, 1}, {2, 2}});
    const std::vector<int> one_each{0, 0, 1};
    CHECK_THROWS_AS(fit_gaussian_stats(x, one_each, 2), InsufficientDataError);
    const std::vector<int> bad{0, 0, 5};
    CHECK_THROWS_AS(fit_gaussian_stats(x, bad, 2), ContractError);
}

TEST_CASE("pca residual is orthogonal to the kept components") {
    std::mt19937_64 rng(9);
    const Matrix x = random_matrix(40, 6, rng);
    const auto pca = fit_pca(x, 3);
    CHECK(max_abs_diff(matmul_bt(pca.components, pca.components), Matrix::identity(3)) < 1e-10);
    const Vector q{1, 2, 3, 4, 5, 6};
    const Vector coords = pca_project(pca, q);
    double centred = 0, kept = 0;
    for (std::size_t j = 0; j < 6; ++j) centred += (q[j] - pca.mean[j]) * (q[j] - pca.mean[j]);
    for (double c : coords) kept += c * c;
    CHECK(pca_residual_norm(pca, q) == doctest::Approx(std::sqrt(centred - kept)).epsilon(1e-10));
    CHECK_THROWS_AS(fit_pca(x, 0), ShapeError);
    CHECK_THROWS_AS(fit_pca(x, 7), ShapeError);
}

TEST_CASE("knn distances match a sorted brute force") {
    std::mt19937_64 rng(21);
    for (auto metric : {DistanceMetric::euclidean, DistanceMetric::cosine}) {
        const Matrix q = random_matrix(8, 5, rng), r = random_matrix(30, 5, rng);
        const std::size_t k = 6;
        const Matrix got = knn_distances(q, r, k, metric);
        for (std::size_t i = 0; i < q.rows(); ++i) {
            std::vector<double> all;
            for (std::size_t j = 0; j < r.rows(); ++j) {
                if (metric == DistanceMetric::euclidean) {
                    all.push_back(std::sqrt(squared_distance(q.row(i), r.row(j))));
                } else {
                    all.push_back(1.0 - dot(q.row(i), r.row(j)) / (norm2(q.row(i)) * norm2(r.row(j))));
                }
            }
            std::sort(all.begin(), all.end());
            for (std::size_t j = 0; j < k; ++j) CHECK(got(i, j) == doctest::Approx(all[j]).epsilon(1e-12));
        }
        CHECK_THROWS_AS(knn_distances(q, r, 31, metric), ContractError);
    }
}

#include "ahmood/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "ahmood/errors.hpp"
#include "ahmood/parallel.hpp"

namespace ahmood {

namespace {

std::string dims(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<Vector> v;
    for (const auto& r : rows) v.emplace_back(r);
    return from_rows(v);
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    const std::size_t cols = rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw ShapeError("ragged rows in Matrix::from_rows");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + dims(a) + " by " + dims(b));
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* o = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* brow = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_bt: " + dims(a) + " by " + dims(b) + "^T");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_at: " + dims(a) + "^T by " + dims(b));
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* brow = b.row(k).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            double* o = out.row(i).data();
            for (std::size_t j = 0; j < n; ++j) o[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto in = m.row(r);
        auto o = out.row(r);
        if (in.empty()) continue;
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

Vector softmax(std::span<const double> z) {
    Matrix row = softmax_rows(Matrix::row_vector(z));
    return Vector(row.values().begin(), row.values().end());
}

double logsumexp(std::span<const double> z) {
    if (z.empty()) throw ContractError("logsumexp of empty vector");
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Vector column_means(const Matrix& m) {
    Vector mean(m.cols(), 0.0);
    if (m.rows() == 0) return mean;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) mean[c] += row[c];
    }
    for (double& v : mean) v /= static_cast<double>(m.rows());
    return mean;
}

Matrix l2_normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double n = norm2(row);
        if (n > 0.0)
            for (double& v : row) v /= n;
    }
    return out;
}

GaussianStats fit_gaussian_stats(const Matrix& features, std::span<const int> labels,
                                 std::size_t num_classes, double regularization) {
    if (labels.size() != features.rows())
        throw ShapeError("fit_gaussian_stats: labels/features row mismatch");
    const std::size_t dim = features.cols();
    std::vector<std::size_t> counts(num_classes, 0);
    GaussianStats stats;
    stats.class_means.assign(num_classes, Vector(dim, 0.0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int c = labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
            throw ContractError("fit_gaussian_stats: label " + std::to_string(c) + " out of range");
        ++counts[c];
        auto row = features.row(i);
        for (std::size_t j = 0; j < dim; ++j) stats.class_means[c][j] += row[j];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] < 2)
            throw InsufficientDataError("class " + std::to_string(c) + " has " +
                                        std::to_string(counts[c]) + " samples; need at least 2");
        for (double& v : stats.class_means[c]) v /= static_cast<double>(counts[c]);
    }

    Matrix cov(dim, dim);
    Vector centered(dim);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto row = features.row(i);
        const auto& mu = stats.class_means[labels[i]];
        for (std::size_t j = 0; j < dim; ++j) centered[j] = row[j] - mu[j];
        for (std::size_t a = 0; a < dim; ++a) {
            const double ca = centered[a];
            for (std::size_t b = a; b < dim; ++b) cov(a, b) += ca * centered[b];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(features.rows());
    for (std::size_t a = 0; a < dim; ++a) {
        for (std::size_t b = a; b < dim; ++b) {
            cov(a, b) *= inv_n;
            cov(b, a) = cov(a, b);
        }
        cov(a, a) += regularization;
    }
    stats.precision = symmetric_pinv(cov);
    stats.shared_covariance = std::move(cov);
    return stats;
}

double mahalanobis_sq(std::span<const double> x, std::span<const double> mean,
                      const Matrix& precision) {
    const std::size_t n = x.size();
    if (mean.size() != n || precision.rows() != n || precision.cols() != n)
        throw ShapeError("mahalanobis_sq: dimension mismatch");
    Vector d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = x[i] - mean[i];
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += d[i] * dot(precision.row(i), d);
    return std::max(s, 0.0);
}

EigenDecomposition symmetric_eig(const Matrix& m) {
    const std::size_t n = m.rows();
    if (m.cols() != n) throw ShapeError("symmetric_eig: matrix is " + dims(m));
    double scale = 1.0;
    for (double v : m.values()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > 1e-8 * scale)
                throw ContractError("symmetric_eig: input is not symmetric");

    Matrix a = m;
    Matrix v = Matrix::identity(n);
    double frob = 0.0;
    for (double x : a.values()) frob += x * x;
    const double tol = 1e-12 * std::max(1.0, std::sqrt(frob));

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
        if (std::sqrt(off) < tol) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    EigenDecomposition out{Vector(n), Matrix(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = v(k, order[j]);
    }
    return out;
}

Matrix symmetric_pinv(const Matrix& m, double rel_cutoff) {
    const auto eig = symmetric_eig(m);
    const std::size_t n = m.rows();
    Matrix out(n, n);
    if (n == 0) return out;
    const double lmax = eig.eigenvalues.front();
    if (lmax <= 0.0) return out;
    for (std::size_t j = 0; j < n; ++j) {
        const double l = eig.eigenvalues[j];
        if (l <= rel_cutoff * lmax) continue;
        const double inv = 1.0 / l;
        for (std::size_t a = 0; a < n; ++a) {
            const double va = eig.eigenvectors(a, j) * inv;
            for (std::size_t b = 0; b < n; ++b) out(a, b) += va * eig.eigenvectors(b, j);
        }
    }
    return out;
}

PcaBasis fit_pca(const Matrix& features, std::size_t d) {
    const std::size_t dim = features.cols();
    if (d < 1 || d > std::min(features.rows(), dim))
        throw ShapeError("fit_pca: d=" + std::to_string(d) + " outside [1, " +
                         std::to_string(std::min(features.rows(), dim)) + "]");
    PcaBasis pca;
    pca.mean = column_means(features);
    Matrix centered = features;
    for (std::size_t r = 0; r < centered.rows(); ++r) {
        auto row = centered.row(r);
        for (std::size_t c = 0; c < dim; ++c) row[c] -= pca.mean[c];
    }
    Matrix cov = matmul_at(centered, centered);
    const double inv_n = 1.0 / static_cast<double>(features.rows());
    for (double& v : cov.values()) v *= inv_n;
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = a + 1; b < dim; ++b) cov(b, a) = cov(a, b);

    const auto eig = symmetric_eig(cov);
    pca.components = Matrix(d, dim);
    pca.eigenvalues.assign(eig.eigenvalues.begin(), eig.eigenvalues.begin() + d);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < dim; ++k) pca.components(j, k) = eig.eigenvectors(k, j);
    return pca;
}

Vector pca_project(const PcaBasis& pca, std::span<const double> x) {
    if (x.size() != pca.mean.size()) throw ShapeError("pca_project: dimension mismatch");
    Vector centered(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) centered[i] = x[i] - pca.mean[i];
    Vector coords(pca.components.rows());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = dot(pca.components.row(j), centered);
    return coords;
}

double pca_residual_norm(const PcaBasis& pca, std::span<const double> x) {
    const Vector coords = pca_project(pca, x);
    Vector r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - pca.mean[i];
    for (std::size_t j = 0; j < coords.size(); ++j) {
        auto comp = pca.components.row(j);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= coords[j] * comp[i];
    }
    return norm2(r);
}

Matrix knn_distances(const Matrix& queries, const Matrix& reference, std::size_t k,
                     DistanceMetric metric) {
    if (k > reference.rows())
        throw ContractError("knn_distances: k=" + std::to_string(k) + " exceeds " +
                            std::to_string(reference.rows()) + " reference rows");
    if (queries.cols() != reference.cols()) throw ShapeError("knn_distances: dimension mismatch");

    const bool cosine = metric == DistanceMetric::cosine;
    const Matrix ref = cosine ? l2_normalize_rows(reference) : Matrix{};
    const Matrix qry = cosine ? l2_normalize_rows(queries) : Matrix{};
    const Matrix& r = cosine ? ref : reference;
    const Matrix& q = cosine ? qry : queries;

    Matrix out(queries.rows(), k);
    parallel_for(queries.rows(), [&](std::size_t i) {
        std::vector<std::pair<double, std::size_t>> d(r.rows());
        for (std::size_t j = 0; j < r.rows(); ++j) {
            const double dist = cosine ? 1.0 - dot(q.row(i), r.row(j))
                                       : std::sqrt(squared_distance(q.row(i), r.row(j)));
            d[j] = {dist, j};
        }
        std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
        for (std::size_t j = 0; j < k; ++j) out(i, j) = d[j].first;
    });
    return out;
}

}  // namespace ahmood

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ahmood {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix from_rows(const std::vector<Vector>& rows);
    static Matrix row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    void fill(double v);
    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a · bᵀ
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// aᵀ · b
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);
Vector softmax(std::span<const double> z);
double logsumexp(std::span<const double> z);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double squared_distance(std::span<const double> a, std::span<const double> b);
Vector column_means(const Matrix& m);
// Copy with every row scaled to unit L2 norm; zero rows stay zero.
Matrix l2_normalize_rows(const Matrix& m);

struct GaussianStats {
    std::vector<Vector> class_means;
    Matrix shared_covariance;
    Matrix precision;
};

inline constexpr double kDefaultCovarianceRegularization = 1e-6;

// Class-conditional Gaussians with one pooled covariance. labels[i] is the
// class of features.row(i), in [0, num_classes).
GaussianStats fit_gaussian_stats(const Matrix& features, std::span<const int> labels,
                                 std::size_t num_classes,
                                 double regularization = kDefaultCovarianceRegularization);

double mahalanobis_sq(std::span<const double> x, std::span<const double> mean,
                      const Matrix& precision);

struct EigenDecomposition {
    Vector eigenvalues;   // non-increasing
    Matrix eigenvectors;  // column j pairs with eigenvalues[j]
};

// Cyclic Jacobi. Throws ContractError when m is not symmetric within 1e-8.
EigenDecomposition symmetric_eig(const Matrix& m);

// Symmetric pseudo-inverse; eigenvalues below rel_cutoff·λ_max are dropped.
Matrix symmetric_pinv(const Matrix& m, double rel_cutoff = 1e-10);

struct PcaBasis {
    Vector mean;
    Matrix components;  // d × Hid, orthonormal rows
    Vector eigenvalues; // d, non-increasing
};

PcaBasis fit_pca(const Matrix& features, std::size_t d);

// Coordinates of (x − mean) in the principal basis.
Vector pca_project(const PcaBasis& pca, std::span<const double> x);
// ‖(x − mean) − projection onto components‖
double pca_residual_norm(const PcaBasis& pca, std::span<const double> x);

enum class DistanceMetric { euclidean, cosine };

// Exact k-NN by full scan. Row i holds the k smallest distances from
// queries.row(i), ascending; ties resolved by lower reference index.
// Cosine distance is 1 − cos(q, r).
Matrix knn_distances(const Matrix& queries, const Matrix& reference, std::size_t k,
                     DistanceMetric metric);

}  // namespace ahmood

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace promptfed {

// Dense row-major matrix of doubles. Entries must stay finite; constructors
// that accept data validate this.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols); // zero-filled
    Matrix(int rows, int cols, std::vector<double> values);

    static Matrix identity(int n);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }

    double& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    std::span<double> row(int r) { return {values_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
    std::span<const double> row(int r) const { return {values_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }

    Matrix transposed() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const;
    void require_finite(const std::string& what) const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> values_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix matmul(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);
double frobenius_dot(const Matrix& a, const Matrix& b);

// Largest singular value via power iteration on A^T A (relative tol 1e-8).
double spectral_norm(const Matrix& a);

struct SvdResult {
    Matrix left;                         // rows x rows, orthogonal
    std::vector<double> singular_values; // length min(rows, cols), non-increasing
    Matrix right;                        // cols x cols, orthogonal (full basis)

    // left * diag(singular_values) * right^T
    Matrix reconstruct() const;
};

// Full SVD by one-sided Jacobi on the thin side. The rank-deficient factor is
// completed to a full orthogonal basis by seeded Gram-Schmidt, so `right`
// always carries all `cols` directions including the null space.
SvdResult svd(const Matrix& a);

} // namespace promptfed

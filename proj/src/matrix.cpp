#include "promptfed/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace promptfed {

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("Matrix: dimensions must be positive");
    values_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Matrix::Matrix(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("Matrix: dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("Matrix: value count does not match shape");
    require_finite("Matrix construction");
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (int r = 0; r < rows_; ++r)
        for (int c = 0; c < cols_; ++c)
            t(c, r) = (*this)(r, c);
    return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    if (!same_shape(other)) throw std::invalid_argument("Matrix +=: shape mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    if (!same_shape(other)) throw std::invalid_argument("Matrix -=: shape mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
}

bool Matrix::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Matrix::require_finite(const std::string& what) const {
    if (!all_finite()) throw std::invalid_argument(what + ": non-finite entries");
}

Matrix operator+(Matrix a, const Matrix& b) { a += b; return a; }
Matrix operator-(Matrix a, const Matrix& b) { a -= b; return a; }
Matrix operator*(Matrix a, double s) { a *= s; return a; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    Matrix c(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        double* ci = c.data() + static_cast<std::size_t>(i) * c.cols();
        const double* ai = a.data() + static_cast<std::size_t>(i) * a.cols();
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.data() + static_cast<std::size_t>(k) * b.cols();
            for (int j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    const double* p = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += p[i] * p[i];
    return std::sqrt(s);
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("frobenius_dot: shape mismatch");
    double s = 0.0;
    const double* p = a.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += p[i] * q[i];
    return s;
}

double spectral_norm(const Matrix& a) {
    const double fro = frobenius_norm(a);
    if (fro == 0.0) return 0.0;

    const int n = a.cols();
    // Power iteration on A^T A with a fixed deterministic start.
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = 1.0 + 1e-3 * static_cast<double>(i % 7);
    double vnorm = 0.0;
    for (double x : v) vnorm += x * x;
    vnorm = std::sqrt(vnorm);
    for (double& x : v) x /= vnorm;

    std::vector<double> av(a.rows()), w(n);
    double sigma = 0.0;
    double prev = -1.0;
    for (int iter = 0; iter < 10000; ++iter) {
        for (int i = 0; i < a.rows(); ++i) {
            double s = 0.0;
            const double* ai = a.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) s += ai[j] * v[j];
            av[i] = s;
        }
        for (int j = 0; j < n; ++j) w[j] = 0.0;
        for (int i = 0; i < a.rows(); ++i) {
            const double* ai = a.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) w[j] += ai[j] * av[i];
        }
        double wnorm = 0.0;
        for (double x : w) wnorm += x * x;
        wnorm = std::sqrt(wnorm);
        if (wnorm == 0.0) return 0.0;
        sigma = std::sqrt(wnorm);
        for (int j = 0; j < n; ++j) v[j] = w[j] / wnorm;
        if (prev >= 0.0 && std::abs(sigma - prev) <= 1e-8 * sigma) break;
        prev = sigma;
    }
    return sigma;
}

Matrix SvdResult::reconstruct() const {
    const int rows = left.rows();
    const int cols = right.rows();
    const int k = static_cast<int>(singular_values.size());
    Matrix out(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += left(i, t) * singular_values[t] * right(j, t);
            out(i, j) = s;
        }
    return out;
}

} // namespace promptfed

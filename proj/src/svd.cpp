#include "promptfed/matrix.hpp"
#include "promptfed/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace promptfed {

namespace {

// Orthogonalize `v` (length n) against accepted columns of `basis`, twice for
// numerical safety. Returns the residual norm.
double orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& q : basis) {
            double d = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * q[i];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * q[i];
        }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    return std::sqrt(norm);
}

} // namespace

SvdResult svd(const Matrix& a) {
    a.require_finite("svd");
    const int rows = a.rows();
    const int cols = a.cols();
    const bool transposed = rows < cols;
    const int n = std::max(rows, cols);
    const int p = std::min(rows, cols);

    // Work on B = A (or A^T) with n >= p, columns stored contiguously.
    std::vector<std::vector<double>> bcol(p, std::vector<double>(n));
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i)
            bcol[j][i] = transposed ? a(j, i) : a(i, j);

    // Right factor of B, p x p, accumulated from the rotations.
    std::vector<std::vector<double>> vcol(p, std::vector<double>(p, 0.0));
    for (int j = 0; j < p; ++j) vcol[j][j] = 1.0;

    std::vector<double> sq(p);
    for (int j = 0; j < p; ++j) {
        double s = 0.0;
        for (double x : bcol[j]) s += x * x;
        sq[j] = s;
    }

    const int max_sweeps = 100 * n;
    const double tol = 1e-15;
    bool converged = (p <= 1);
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        bool rotated = false;
        for (int i = 0; i < p - 1; ++i) {
            for (int j = i + 1; j < p; ++j) {
                const double ab = sq[i] * sq[j];
                if (ab == 0.0) continue;
                double c = 0.0;
                for (int k = 0; k < n; ++k) c += bcol[i][k] * bcol[j][k];
                if (std::abs(c) <= tol * std::sqrt(ab)) continue;
                rotated = true;
                const double zeta = (sq[j] - sq[i]) / (2.0 * c);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (int k = 0; k < n; ++k) {
                    const double x = bcol[i][k];
                    const double y = bcol[j][k];
                    bcol[i][k] = cs * x - sn * y;
                    bcol[j][k] = sn * x + cs * y;
                }
                for (int k = 0; k < p; ++k) {
                    const double x = vcol[i][k];
                    const double y = vcol[j][k];
                    vcol[i][k] = cs * x - sn * y;
                    vcol[j][k] = sn * x + cs * y;
                }
                sq[i] -= t * c;
                sq[j] += t * c;
                if (sq[i] < 0.0) sq[i] = 0.0;
                if (sq[j] < 0.0) sq[j] = 0.0;
            }
        }
        converged = !rotated;
    }
    if (!converged) {
        double hi = 0.0, lo = std::numeric_limits<double>::infinity();
        for (int j = 0; j < p; ++j) {
            hi = std::max(hi, sq[j]);
            lo = std::min(lo, sq[j]);
        }
        throw std::runtime_error(
            "svd: one-sided Jacobi failed to converge after " + std::to_string(max_sweeps) +
            " sweeps (column norm^2 range [" + std::to_string(lo) + ", " + std::to_string(hi) + "])");
    }

    std::vector<double> sigma(p);
    for (int j = 0; j < p; ++j) {
        double s = 0.0;
        for (double x : bcol[j]) s += x * x;
        sigma[j] = std::sqrt(s);
    }

    // Non-increasing order; ties keep original column index (stable).
    std::vector<int> order(p);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return sigma[x] > sigma[y]; });

    const double sigma_max = sigma[order[0]];
    const double rank_tol = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * sigma_max;

    // Left factor of B: normalized nonzero columns, then a seeded Gram-Schmidt
    // completion for the rank-deficient and n > p part.
    std::vector<std::vector<double>> ucol;
    ucol.reserve(n);
    int rank = 0;
    for (int idx = 0; idx < p; ++idx) {
        const int j = order[idx];
        if (sigma[j] <= rank_tol || sigma[j] == 0.0) break;
        std::vector<double> u(n);
        for (int k = 0; k < n; ++k) u[k] = bcol[j][k] / sigma[j];
        ucol.push_back(std::move(u));
        ++rank;
    }
    RngStream completion = RngStream::derive(0x53564443u, "svd-basis-completion",
                                             static_cast<std::uint64_t>(n),
                                             static_cast<std::uint64_t>(rank));
    while (static_cast<int>(ucol.size()) < n) {
        std::vector<double> cand(n);
        bool accepted = false;
        for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
            for (int k = 0; k < n; ++k) cand[k] = completion.next_uniform(-1.0, 1.0);
            const double norm = orthogonalize(cand, ucol);
            if (norm > 1e-4) {
                for (int k = 0; k < n; ++k) cand[k] /= norm;
                accepted = true;
            }
        }
        if (!accepted) throw std::runtime_error("svd: basis completion failed");
        ucol.push_back(cand);
    }

    Matrix u_full(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            u_full(i, j) = ucol[j][i];

    Matrix v_full(p, p);
    for (int idx = 0; idx < p; ++idx) {
        const int j = order[idx];
        for (int i = 0; i < p; ++i) v_full(i, idx) = vcol[j][i];
    }

    std::vector<double> sv(p);
    for (int idx = 0; idx < p; ++idx) sv[idx] = sigma[order[idx]];

    SvdResult out;
    out.singular_values = std::move(sv);
    if (transposed) {
        // A = B^T = V Sigma U^T
        out.left = std::move(v_full);
        out.right = std::move(u_full);
    } else {
        out.left = std::move(u_full);
        out.right = std::move(v_full);
    }
    return out;
}

} // namespace promptfed

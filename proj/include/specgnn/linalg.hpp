#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "specgnn/matrix.hpp"
#include "specgnn/rng.hpp"

namespace specgnn {

inline constexpr double kSymmetryTol = 1e-12;

// Orthonormal eigenbasis of a symmetric matrix. Column i of `eigenvectors`
// pairs with `eigenvalues[i]`; eigenvalues are sorted ascending and each
// eigenvector is sign-fixed so its largest-magnitude entry (lowest index on
// ties) is non-negative.
struct EigenDecomposition {
    std::vector<double> eigenvalues;
    DenseMatrix eigenvectors;
};

namespace detail {

inline double offdiag_frobenius(const DenseMatrix& w) {
    double s = 0.0;
    const std::size_t n = w.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * w(i, j) * w(i, j);
    return std::sqrt(s);
}

}  // namespace detail

// Cyclic Jacobi eigensolver for symmetric matrices. Converges when the
// off-diagonal Frobenius norm drops below 1e-12 * ||A||_F, capped at 100
// sweeps. Deterministic: identical input yields identical output.
inline EigenDecomposition jacobi_eigh(const DenseMatrix& a) {
    if (!a.square()) throw DimensionError("jacobi_eigh: matrix must be square");
    const std::size_t n = a.rows();
    if (n == 0) throw DimensionError("jacobi_eigh: empty matrix");
    if (a.symmetry_gap() > kSymmetryTol)
        throw NumericError("jacobi_eigh: input asymmetric beyond tolerance");

    EigenDecomposition out;
    out.eigenvectors = DenseMatrix::identity(n);
    if (n == 1) {
        out.eigenvalues = {a(0, 0)};
        return out;
    }

    DenseMatrix w = a;
    // Force exact symmetry so the rotations stay consistent.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) w(j, i) = w(i, j);
    DenseMatrix& v = out.eigenvectors;

    const double norm_f = a.frobenius_norm();
    const double threshold = 1e-12 * norm_f;
    constexpr int kMaxSweeps = 100;

    bool converged = norm_f == 0.0;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        if (detail::offdiag_frobenius(w) <= threshold) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = w(p, q);
                if (apq == 0.0) continue;
                const double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
                const double t =
                    (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                const double app = w(p, p), aqq = w(q, q);
                w(p, p) = app - t * apq;
                w(q, q) = aqq + t * apq;
                w(p, q) = w(q, p) = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = w(r, p), arq = w(r, q);
                    w(r, p) = w(p, r) = arp - s * (arq + tau * arp);
                    w(r, q) = w(q, r) = arq + s * (arp - tau * arq);
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vrp = v(r, p), vrq = v(r, q);
                    v(r, p) = vrp - s * (vrq + tau * vrp);
                    v(r, q) = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }
    if (!converged && detail::offdiag_frobenius(w) > threshold)
        throw NumericError("jacobi_eigh: no convergence after 100 sweeps, off-diagonal norm " +
                           fmt_g17(detail::offdiag_frobenius(w)));

    // Sort ascending; stable so equal eigenvalues keep the solver's order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return w(i, i) < w(j, j); });

    out.eigenvalues.resize(n);
    DenseMatrix sorted(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t src = order[c];
        out.eigenvalues[c] = w(src, src);
        for (std::size_t r = 0; r < n; ++r) sorted(r, c) = v(r, src);
    }

    // Sign convention: largest-magnitude entry of each column non-negative.
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t imax = 0;
        double best = std::abs(sorted(0, c));
        for (std::size_t r = 1; r < n; ++r) {
            const double m = std::abs(sorted(r, c));
            if (m > best) {
                best = m;
                imax = r;
            }
        }
        if (sorted(imax, c) < 0.0)
            for (std::size_t r = 0; r < n; ++r) sorted(r, c) = -sorted(r, c);
    }
    out.eigenvectors = std::move(sorted);
    return out;
}

// Spectral norm (largest singular value) by power iteration on A^T A,
// relative tolerance 1e-10 on the Rayleigh quotient. Zero matrix returns 0.
inline double operator_norm(const DenseMatrix& a) {
    if (!a.square()) throw DimensionError("operator_norm: matrix must be square");
    const std::size_t n = a.rows();
    if (n == 0) throw DimensionError("operator_norm: empty matrix");
    if (a.max_abs() == 0.0) return 0.0;

    const DenseMatrix at = a.transposed();
    Rng rng(0x9E3779B97F4A7C15ULL);  // fixed start vector keeps results reproducible
    std::vector<double> x(n);
    for (double& xi : x) xi = rng.normal();
    double nx = norm2(x);
    for (double& xi : x) xi /= nx;

    // The Rayleigh quotient of A^T A increases monotonically with a geometric
    // tail; the ratio of consecutive increments estimates the remaining error,
    // which is what the relative tolerance is applied to.
    double lambda = 0.0;
    double prev_delta = std::numeric_limits<double>::infinity();
    int stable = 0;
    constexpr int kMaxIters = 200000;
    for (int it = 0; it < kMaxIters; ++it) {
        std::vector<double> y = matvec(a, x);
        std::vector<double> z = matvec(at, y);
        const double lambda_next = dot(x, z);
        const double nz = norm2(z);
        if (nz == 0.0) {
            // x landed in the null space; redraw.
            for (double& xi : x) xi = rng.normal();
            nx = norm2(x);
            for (double& xi : x) xi /= nx;
            prev_delta = std::numeric_limits<double>::infinity();
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) x[i] = z[i] / nz;

        const double scale = std::max(std::abs(lambda_next), 1e-300);
        const double delta = std::abs(lambda_next - lambda);
        bool converged_step = false;
        if (delta <= 1e-14 * scale) {
            converged_step = true;  // at the floating-point floor
        } else if (std::isfinite(prev_delta) && prev_delta > 0.0) {
            const double rho = delta / prev_delta;
            converged_step = rho < 1.0 && delta * rho / (1.0 - rho) <= 1e-10 * scale;
        }
        stable = converged_step ? stable + 1 : 0;
        prev_delta = delta;
        lambda = lambda_next;
        if (stable >= 2) break;
    }
    return std::sqrt(std::max(lambda, 0.0));
}

// Graph Fourier transform: coefficients of x in the eigenvector basis, V^T x.
inline std::vector<double> gft(const DenseMatrix& v, std::span<const double> x) {
    return matvec_transposed(v, x);
}

inline std::vector<double> inverse_gft(const DenseMatrix& v, std::span<const double> xhat) {
    return matvec(v, xhat);
}

// {S^0 x, S^1 x, ..., S^k x} by repeated matrix-vector products; S^k is never
// formed. The full trace feeds both filtering and backprop.
inline std::vector<std::vector<double>> shift_power_trace(const DenseMatrix& s, std::size_t k,
                                                          std::span<const double> x) {
    if (!s.square() || s.rows() != x.size())
        throw DimensionError("shift_power_trace: dimension mismatch");
    std::vector<std::vector<double>> trace;
    trace.reserve(k + 1);
    trace.emplace_back(x.begin(), x.end());
    for (std::size_t i = 1; i <= k; ++i) trace.push_back(matvec(s, trace.back()));
    return trace;
}

inline std::vector<double> shift_power_apply(const DenseMatrix& s, std::size_t k,
                                             std::span<const double> x) {
    if (!s.square() || s.rows() != x.size())
        throw DimensionError("shift_power_apply: dimension mismatch");
    std::vector<double> cur(x.begin(), x.end());
    for (std::size_t i = 1; i <= k; ++i) cur = matvec(s, cur);
    return cur;
}

}  // namespace specgnn

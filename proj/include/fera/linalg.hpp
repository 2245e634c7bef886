#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace fera {

inline constexpr double kEpsilon = 1e-12;

// Dense row-major matrix of doubles. Small and value-semantic; every metric
// in the pipeline is computed on matrices no larger than |root| x d'.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("Matrix: data size does not match shape");
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data).subspan(r * cols, cols);
    }
};

struct RobustStats {
    double median = 0.0;
    double iqr = 0.0;  // Q75 - Q25
    double mad = 0.0;  // median(|x - median|)
};

// Signals a covariance over fewer than two rows; callers map this to a zero
// spectral score.
struct DegenerateCovariance : std::runtime_error {
    DegenerateCovariance() : std::runtime_error("covariance needs >= 2 rows") {}
};

struct PowerIterationResult {
    double eigenvalue = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Subtract the column mean from every column. Idempotent.
inline Matrix center_rows(const Matrix& m) {
    if (m.rows == 0 || m.cols == 0)
        throw std::invalid_argument("center_rows: empty matrix");
    Matrix out = m;
    for (std::size_t c = 0; c < m.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < m.rows; ++r) mean += m.at(r, c);
        mean /= static_cast<double>(m.rows);
        for (std::size_t r = 0; r < m.rows; ++r) out.at(r, c) -= mean;
    }
    return out;
}

// C = 1/(n-1) M^T M for a column-centered M. Output is cols x cols, symmetric
// PSD by construction.
inline Matrix covariance(const Matrix& m_centered) {
    if (m_centered.rows < 2) throw DegenerateCovariance();
    const std::size_t n = m_centered.rows, d = m_centered.cols;
    Matrix c(d, d);
    const double scale = 1.0 / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                acc += m_centered.at(r, i) * m_centered.at(r, j);
            acc *= scale;
            c.at(i, j) = acc;
            c.at(j, i) = acc;
        }
    }
    return c;
}

namespace detail {

inline void check_symmetric(const Matrix& c, double tol) {
    for (std::size_t i = 0; i < c.rows; ++i)
        for (std::size_t j = i + 1; j < c.cols; ++j) {
            double scale = std::max({1.0, std::abs(c.at(i, j)), std::abs(c.at(j, i))});
            if (std::abs(c.at(i, j) - c.at(j, i)) > tol * scale)
                throw std::invalid_argument("lambda_max: matrix not symmetric");
        }
}

}  // namespace detail

// Dominant eigenvalue by power iteration with a deterministic start vector
// (normalized all-ones). Start determinism keeps the whole pipeline free of
// seed coupling in the numerics.
inline PowerIterationResult lambda_max_full(const Matrix& c,
                                            int max_iters = 1000,
                                            double rel_tol = 1e-10) {
    if (c.rows != c.cols || c.rows == 0)
        throw std::invalid_argument("lambda_max: matrix must be square, non-empty");
    detail::check_symmetric(c, 1e-8);

    const std::size_t d = c.rows;
    std::vector<double> w(d, 0.0);
    PowerIterationResult res;
    // The all-ones start can land exactly in the null space (e.g. a covariance
    // whose rows sum to zero); fall back to basis vectors, still deterministic.
    for (std::size_t attempt = 0; attempt <= d; ++attempt) {
        std::vector<double> v(d, 0.0);
        if (attempt == 0)
            v.assign(d, 1.0 / std::sqrt(static_cast<double>(d)));
        else
            v[attempt - 1] = 1.0;
        double lambda = 0.0;
        bool collapsed = false;
        for (int it = 0; it < max_iters; ++it) {
            // w = C v
            for (std::size_t i = 0; i < d; ++i) {
                double acc = 0.0;
                const double* row = &c.data[i * d];
                for (std::size_t j = 0; j < d; ++j) acc += row[j] * v[j];
                w[i] = acc;
            }
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            ++res.iterations;
            if (norm < kEpsilon) {
                collapsed = true;
                break;
            }
            double next = 0.0;  // Rayleigh quotient with unit v
            for (std::size_t i = 0; i < d; ++i) next += v[i] * w[i];
            for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / norm;
            if (it > 0 && std::abs(next - lambda) <
                              rel_tol * std::max(1.0, std::abs(next))) {
                res.eigenvalue = next;
                res.converged = true;
                return res;
            }
            lambda = next;
        }
        if (!collapsed) {
            res.eigenvalue = lambda;
            res.converged = false;
            return res;
        }
    }
    // C annihilated the all-ones vector and every basis vector: numerically
    // the zero matrix.
    res.eigenvalue = 0.0;
    res.converged = true;
    return res;
}

inline double lambda_max(const Matrix& c) {
    return lambda_max_full(c).eigenvalue;
}

inline double frobenius(const Matrix& m) {
    double acc = 0.0;
    for (double x : m.data) acc += x * x;
    return std::sqrt(acc);
}

// Cosine similarity with an epsilon-padded denominator so that zero vectors
// yield 0 rather than NaN.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double v = dot / (std::sqrt(na) * std::sqrt(nb) + kEpsilon);
    return std::clamp(v, -1.0, 1.0);
}

namespace detail {

// Quantile with linear interpolation between order statistics (type-7).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    double pos = q * static_cast<double>(n - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo >= n - 1) return sorted[n - 1];
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double median_sorted(const std::vector<double>& sorted) {
    const std::size_t n = sorted.size();
    if (n % 2 == 1) return sorted[n / 2];
    return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

}  // namespace detail

inline double median(std::vector<double> xs) {
    if (xs.empty()) throw std::invalid_argument("median: empty input");
    std::sort(xs.begin(), xs.end());
    return detail::median_sorted(xs);
}

inline RobustStats robust_stats(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("robust_stats: empty input");
    std::vector<double> sorted(xs.begin(), xs.end());
    std::sort(sorted.begin(), sorted.end());
    RobustStats rs;
    rs.median = detail::median_sorted(sorted);
    rs.iqr = detail::quantile_sorted(sorted, 0.75) -
             detail::quantile_sorted(sorted, 0.25);
    std::vector<double> dev(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i)
        dev[i] = std::abs(sorted[i] - rs.median);
    std::sort(dev.begin(), dev.end());
    rs.mad = detail::median_sorted(dev);
    return rs;
}

inline double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

}  // namespace fera

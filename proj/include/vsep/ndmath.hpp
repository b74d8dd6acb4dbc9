#pragma once

// Deterministic dense kernels used by the probe and the evaluators.
// All arithmetic is double precision and every reduction runs in index order,
// so results are reproducible bit-for-bit on one platform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vsep/error.hpp"
#include "vsep/rng.hpp"

namespace vsep {

/// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                                 std::to_string(rows_ * cols_));
        }
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix rows");
            std::copy(row.begin(), row.end(), m.row(i++).begin());
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Normalization applied to projected and word vectors before cosine scoring.
enum class NormMode { none, l2_only, ln_then_l2 };

inline constexpr double kLayerNormEps = 1e-5;

inline std::string_view to_string(NormMode mode) noexcept {
    switch (mode) {
        case NormMode::none: return "none";
        case NormMode::l2_only: return "l2_only";
        case NormMode::ln_then_l2: return "ln_then_l2";
    }
    return "none";
}

inline std::optional<NormMode> parse_norm_mode(std::string_view s) noexcept {
    if (s == "none") return NormMode::none;
    if (s == "l2_only") return NormMode::l2_only;
    if (s == "ln_then_l2") return NormMode::ln_then_l2;
    return std::nullopt;
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> v) noexcept { return std::sqrt(dot(v, v)); }

inline bool all_finite(std::span<const double> v) noexcept {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Layer normalization

struct LayerNormResult {
    std::vector<double> out;
    double inv_std = 0.0;  // 1 / sqrt(var + eps)
};

/// Per-vector recentering and rescaling with population variance and no
/// affine parameters.
inline LayerNormResult layer_norm_with_stats(std::span<const double> v, double eps = kLayerNormEps) {
    if (v.size() < 2) throw DimensionError("layer_norm needs at least 2 elements");
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= n;
    LayerNormResult r;
    r.inv_std = 1.0 / std::sqrt(var + eps);
    r.out.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r.out[i] = (v[i] - mean) * r.inv_std;
    return r;
}

inline std::vector<double> layer_norm(std::span<const double> v, double eps = kLayerNormEps) {
    return layer_norm_with_stats(v, eps).out;
}

/// Gradient of layer_norm with respect to its input, given the normalized
/// output `y`, the saved `inv_std` and the upstream gradient `dy`.
inline std::vector<double> layer_norm_backward(std::span<const double> y, double inv_std,
                                               std::span<const double> dy) {
    const double n = static_cast<double>(y.size());
    double mean_dy = 0.0;
    double mean_dy_y = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        mean_dy += dy[i];
        mean_dy_y += dy[i] * y[i];
    }
    mean_dy /= n;
    mean_dy_y /= n;
    std::vector<double> dx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = inv_std * (dy[i] - mean_dy - y[i] * mean_dy_y);
    return dx;
}

// ---------------------------------------------------------------------------
// L2 normalization

inline std::vector<double> l2_normalize(std::span<const double> v) {
    const double n = norm2(v);
    if (!(n > 0.0)) throw NumericError("l2_normalize of a zero vector");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

/// Gradient of u / |u| given the unit output, the input norm and upstream grad.
inline std::vector<double> l2_normalize_backward(std::span<const double> unit, double input_norm,
                                                 std::span<const double> dunit) {
    const double proj = dot(unit, dunit);
    std::vector<double> du(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i) du[i] = (dunit[i] - unit[i] * proj) / input_norm;
    return du;
}

/// Intermediate values of normalize_by_mode, kept for the backward pass.
struct NormTrace {
    NormMode mode = NormMode::none;
    std::vector<double> ln_out;
    double ln_inv_std = 0.0;
    double l2_input_norm = 0.0;
    std::vector<double> out;
};

inline NormTrace normalize_traced(std::span<const double> v, NormMode mode) {
    NormTrace t;
    t.mode = mode;
    switch (mode) {
        case NormMode::none:
            t.out.assign(v.begin(), v.end());
            break;
        case NormMode::l2_only:
            t.l2_input_norm = norm2(v);
            t.out = l2_normalize(v);
            break;
        case NormMode::ln_then_l2: {
            auto ln = layer_norm_with_stats(v);
            t.ln_out = std::move(ln.out);
            t.ln_inv_std = ln.inv_std;
            t.l2_input_norm = norm2(t.ln_out);
            t.out = l2_normalize(t.ln_out);
            break;
        }
    }
    return t;
}

inline std::vector<double> normalize_by_mode(std::span<const double> v, NormMode mode) {
    return normalize_traced(v, mode).out;
}

inline std::vector<double> normalize_backward(const NormTrace& t, std::span<const double> dout) {
    switch (t.mode) {
        case NormMode::none:
            return {dout.begin(), dout.end()};
        case NormMode::l2_only:
            return l2_normalize_backward(t.out, t.l2_input_norm, dout);
        case NormMode::ln_then_l2: {
            const auto dln = l2_normalize_backward(t.out, t.l2_input_norm, dout);
            return layer_norm_backward(t.ln_out, t.ln_inv_std, dln);
        }
    }
    return {};
}

inline Matrix normalize_rows(const Matrix& m, NormMode mode) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = normalize_by_mode(m.row(i), mode);
        std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cosine similarity

/// Entry (i, j) is cos(A_i, B_j).
inline Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("cosine_matrix: column mismatch " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.cols()));
    }
    const Matrix an = normalize_rows(a, NormMode::l2_only);
    const Matrix bn = normalize_rows(b, NormMode::l2_only);
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(an.row(i), bn.row(j));
    return out;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy against the identity pairing

struct XentResult {
    double loss = 0.0;
    Matrix dlogits;
};

/// Mean over rows of -log softmax(row)[row index]; gradient is
/// (softmax - onehot) / n.
inline XentResult softmax_xent_rows(const Matrix& logits) {
    const std::size_t n = logits.rows();
    if (n == 0 || logits.cols() != n) throw DimensionError("softmax_xent_rows needs a square non-empty matrix");
    if (!logits.all_finite()) throw NumericError("softmax_xent_rows: non-finite logits");
    XentResult r{0.0, Matrix(n, n)};
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double x : row) z += std::exp(x - mx);
        const double log_z = std::log(z) + mx;
        r.loss += log_z - row[i];
        for (std::size_t j = 0; j < n; ++j) {
            const double p = std::exp(row[j] - log_z);
            r.dlogits(i, j) = (p - (i == j ? 1.0 : 0.0)) * inv_n;
        }
    }
    r.loss *= inv_n;
    return r;
}

// ---------------------------------------------------------------------------
// Top-2 principal components

struct Pca2Result {
    Matrix coords;                      // n x 2
    std::vector<double> components[2];  // unit eigenvectors, sign-normalized
    double eigenvalues[2] = {0.0, 0.0};
    double explained_fraction = 0.0;
    int iterations[2] = {0, 0};
};

inline constexpr double kPcaTolerance = 1e-10;
inline constexpr int kPcaMaxIterations = 10000;

namespace detail {

inline std::vector<double> sym_matvec(const Matrix& c, std::span<const double> v) {
    std::vector<double> out(c.rows(), 0.0);
    for (std::size_t i = 0; i < c.rows(); ++i) out[i] = dot(c.row(i), v);
    return out;
}

// First coordinate with magnitude above noise level is made positive.
inline void fix_sign(std::vector<double>& v) {
    for (double x : v) {
        if (std::abs(x) > 1e-12) {
            if (x < 0) {
                for (double& y : v) y = -y;
            }
            return;
        }
    }
}

inline void orthogonalize(std::vector<double>& v, std::span<const double> against) {
    const double p = dot(v, against);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * against[i];
}

struct PowerResult {
    std::vector<double> vec;
    double value = 0.0;
    int iterations = 0;
};

// Power iteration on a symmetric PSD matrix, optionally restricted to the
// orthogonal complement of `deflate`.
inline PowerResult power_iterate(const Matrix& c, const std::vector<double>* deflate, double scale) {
    const std::size_t d = c.rows();
    Rng rng(0x5eedULL + (deflate ? 1 : 0));
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    if (deflate) orthogonalize(v, *deflate);
    double nv = norm2(v);
    for (double& x : v) x /= nv;

    const double tol = kPcaTolerance * std::max(scale, 1e-300);
    double residual = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= kPcaMaxIterations; ++it) {
        auto w = sym_matvec(c, v);
        if (deflate) orthogonalize(w, *deflate);
        const double lambda = dot(v, w);
        double r2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) r2 += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
        residual = std::sqrt(r2);
        const double nw = norm2(w);
        if (residual <= tol || nw <= tol) {
            // nw <= tol: the remaining spectrum is numerically zero, keep v.
            return {std::move(v), nw <= tol ? 0.0 : lambda, it};
        }
        for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / nw;
        if (deflate) {
            orthogonalize(v, *deflate);
            nv = norm2(v);
            for (double& x : v) x /= nv;
        }
    }
    throw ConvergenceError("pca2: power iteration did not converge in " + std::to_string(kPcaMaxIterations) +
                               " iterations",
                           residual);
}

}  // namespace detail

/// Sample covariance (mean-centered, divisor n - 1).
inline Matrix covariance(const Matrix& x) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    Matrix c(d, d);
    std::vector<double> centered(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) centered[j] = x(i, j) - mean[j];
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = a; b < d; ++b) c(a, b) += centered[a] * centered[b];
    }
    const double denom = static_cast<double>(n - 1);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            c(a, b) /= denom;
            c(b, a) = c(a, b);
        }
    return c;
}

/// Projects X onto its two leading principal axes, found by power iteration
/// with deflation.
inline Pca2Result pca2(const Matrix& x) {
    if (x.rows() < 3) throw DimensionError("pca2 needs at least 3 rows");
    if (x.cols() < 2) throw DimensionError("pca2 needs at least 2 columns");
    const Matrix c = covariance(x);
    double trace = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i) trace += c(i, i);

    Pca2Result r;
    r.coords = Matrix(x.rows(), 2);
    if (!(trace > 0.0)) {
        // All points coincide; any axes will do.
        r.components[0].assign(x.cols(), 0.0);
        r.components[1].assign(x.cols(), 0.0);
        r.components[0][0] = 1.0;
        r.components[1][1] = 1.0;
        return r;
    }
    auto first = detail::power_iterate(c, nullptr, trace);
    detail::fix_sign(first.vec);
    auto second = detail::power_iterate(c, &first.vec, trace);
    detail::fix_sign(second.vec);

    r.eigenvalues[0] = std::max(first.value, 0.0);
    r.eigenvalues[1] = std::max(second.value, 0.0);
    r.iterations[0] = first.iterations;
    r.iterations[1] = second.iterations;
    r.explained_fraction = std::clamp((r.eigenvalues[0] + r.eigenvalues[1]) / trace, 0.0, 1.0);
    r.components[0] = std::move(first.vec);
    r.components[1] = std::move(second.vec);

    std::vector<double> mean(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
    for (double& m : mean) m /= static_cast<double>(x.rows());
    std::vector<double> centered(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) centered[j] = x(i, j) - mean[j];
        r.coords(i, 0) = dot(centered, r.components[0]);
        r.coords(i, 1) = dot(centered, r.components[1]);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Anisotropy diagnostics

struct AnisotropyStats {
    double mean_pairwise_cosine = 0.0;
    double mean_norm_ratio = 0.0;
    Matrix pca2_coords;
    double explained_fraction = 0.0;
    std::size_t pairs_used = 0;
    bool exhaustive = false;
};

inline AnisotropyStats anisotropy_stats(const Matrix& x, std::size_t sample_pairs, std::uint64_t seed) {
    const std::size_t n = x.rows();
    if (n < 2) throw DimensionError("anisotropy_stats needs at least 2 rows");
    const Matrix unit = normalize_rows(x, NormMode::l2_only);

    AnisotropyStats s;
    const std::size_t total_pairs = n * (n - 1) / 2;
    double acc = 0.0;
    if (total_pairs <= sample_pairs) {
        s.exhaustive = true;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) acc += dot(unit.row(i), unit.row(j));
        s.pairs_used = total_pairs;
    } else {
        Rng rng(derive_seed(seed, 0xa150));
        for (std::size_t k = 0; k < sample_pairs; ++k) {
            const std::size_t i = rng.below(n);
            std::size_t j = rng.below(n - 1);
            if (j >= i) ++j;
            acc += dot(unit.row(i), unit.row(j));
        }
        s.pairs_used = sample_pairs;
    }
    s.mean_pairwise_cosine = s.pairs_used ? std::clamp(acc / static_cast<double>(s.pairs_used), -1.0, 1.0) : 0.0;

    std::vector<double> mean(x.cols(), 0.0);
    double mean_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
        mean_norm += norm2(x.row(i));
    }
    for (double& m : mean) m /= static_cast<double>(n);
    mean_norm /= static_cast<double>(n);
    s.mean_norm_ratio = mean_norm > 0.0 ? norm2(mean) / mean_norm : 0.0;

    if (n >= 3 && x.cols() >= 2) {
        auto p = pca2(x);
        s.pca2_coords = std::move(p.coords);
        s.explained_fraction = p.explained_fraction;
    } else {
        // Two points: the only axis is their difference.
        s.pca2_coords = Matrix(n, 2);
        std::vector<double> diff(x.cols());
        for (std::size_t j = 0; j < x.cols(); ++j) diff[j] = x(1, j) - x(0, j);
        const double half = norm2(diff) / 2.0;
        s.pca2_coords(0, 0) = -half;
        s.pca2_coords(1, 0) = half;
        s.explained_fraction = half > 0.0 ? 1.0 : 0.0;
    }
    return s;
}

}  // namespace vsep

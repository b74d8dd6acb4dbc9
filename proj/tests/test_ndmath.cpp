#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support/oracles.hpp"
#include "vsep/ndmath.hpp"
#include "vsep/rng.hpp"

using namespace vsep;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (double& x : m.data()) x = scale * rng.normal();
    return m;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

TEST(Matrix, ShapeAndAccess) {
    Matrix m(2, 3, 1.5);
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_EQ(m.cols(), 3u);
    m(1, 2) = -4.0;
    EXPECT_EQ(m.row(1)[2], -4.0);
    EXPECT_EQ(m.transposed()(2, 1), -4.0);
    EXPECT_EQ(Matrix::identity(3)(1, 1), 1.0);
    EXPECT_EQ(Matrix::identity(3)(0, 1), 0.0);
    EXPECT_THROW(Matrix(2, 2, std::vector<double>{1.0}), DimensionError);
}

TEST(NormMode, Names) {
    for (auto m : {NormMode::none, NormMode::l2_only, NormMode::ln_then_l2})
        EXPECT_EQ(parse_norm_mode(to_string(m)), m);
    EXPECT_FALSE(parse_norm_mode("layernorm").has_value());
}

// ---------------------------------------------------------------------------

TEST(LayerNorm, AlreadyNormalized) {
    const auto y = layer_norm(std::vector<double>{1.0, -1.0});
    // var = 1, so the output is scaled by 1/sqrt(1 + eps).
    EXPECT_NEAR(y[0], 1.0, 1e-5);
    EXPECT_NEAR(y[1], -1.0, 1e-5);
    EXPECT_DOUBLE_EQ(y[0], 1.0 / std::sqrt(1.0 + 1e-5));
}

TEST(LayerNorm, ConstantVectorGoesToZero) {
    for (double x : layer_norm(std::vector<double>{3.0, 3.0, 3.0})) EXPECT_EQ(x, 0.0);
}

TEST(LayerNorm, HandComputedThreeVector) {
    // mean 4, population variance 8/3.
    const double s = 2.0 / std::sqrt(8.0 / 3.0 + 1e-5);
    const auto y = layer_norm(std::vector<double>{2.0, 4.0, 6.0});
    EXPECT_NEAR(y[0], -s, 1e-15);
    EXPECT_EQ(y[1], 0.0);
    EXPECT_NEAR(y[2], s, 1e-15);
    EXPECT_NEAR(y[2], 1.224744, 1e-5);
}

TEST(LayerNorm, RejectsShortInput) {
    EXPECT_THROW(layer_norm(std::vector<double>{1.0}), DimensionError);
    EXPECT_THROW(layer_norm(std::vector<double>{}), DimensionError);
}

TEST(LayerNorm, AffineInvarianceProperty) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(30);
        auto v = random_vector(rng, n, 1000.0);
        const double a = std::exp(rng.uniform(0.0, 3.0));
        const double b = rng.uniform(-100.0, 100.0);
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i] = a * v[i] + b;
        // Keep the variance well above eps so eps does not matter.
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / n, var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        if (var / n < 1e5) continue;
        const auto y1 = layer_norm(v), y2 = layer_norm(w);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-9);
    }
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.below(10);
        const auto v = random_vector(rng, n);
        const auto dy = random_vector(rng, n);
        const auto fwd = layer_norm_with_stats(v);
        const auto dx = layer_norm_backward(fwd.out, fwd.inv_std, dy);
        for (std::size_t i = 0; i < n; ++i) {
            auto up = v, down = v;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            const auto yu = oracle::layer_norm(oracle::widen(up)), yd = oracle::layer_norm(oracle::widen(down));
            long double fd = 0;
            for (std::size_t k = 0; k < n; ++k) fd += dy[k] * (yu[k] - yd[k]) / 2e-6L;
            EXPECT_NEAR(dx[i], static_cast<double>(fd), 1e-7 * (1.0 + std::fabs(dx[i])));
        }
    }
}

// ---------------------------------------------------------------------------

TEST(L2Normalize, Examples) {
    const auto y = l2_normalize(std::vector<double>{3.0, 4.0});
    EXPECT_DOUBLE_EQ(y[0], 0.6);
    EXPECT_DOUBLE_EQ(y[1], 0.8);
    const std::vector<double> e{0.0, 1.0, 0.0};
    EXPECT_EQ(l2_normalize(e), e);
    EXPECT_THROW(l2_normalize(std::vector<double>{0.0, 0.0}), NumericError);
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences) {
    Rng rng(13);
    const auto v = random_vector(rng, 7);
    const auto du = random_vector(rng, 7);
    const auto u = l2_normalize(v);
    const auto dv = l2_normalize_backward(u, norm2(v), du);
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto up = v, down = v;
        up[i] += 1e-6;
        down[i] -= 1e-6;
        const auto yu = oracle::l2(oracle::widen(up)), yd = oracle::l2(oracle::widen(down));
        long double fd = 0;
        for (std::size_t k = 0; k < v.size(); ++k) fd += du[k] * (yu[k] - yd[k]) / 2e-6L;
        EXPECT_NEAR(dv[i], static_cast<double>(fd), 1e-8);
    }
}

TEST(NormalizeByMode, LayerNormRemovesCommonOffset) {
    Rng rng(14);
    auto v = random_vector(rng, 16);
    auto w = v;
    for (double& x : w) x += 1000.0;
    const auto a = normalize_by_mode(v, NormMode::ln_then_l2);
    const auto b = normalize_by_mode(w, NormMode::ln_then_l2);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
    EXPECT_EQ(normalize_by_mode(v, NormMode::none), v);
}

// ---------------------------------------------------------------------------

TEST(CosineMatrix, SingleUnitRow) {
    const auto m = Matrix::from_rows({{0.6, 0.8}});
    const auto c = cosine_matrix(m, m);
    EXPECT_NEAR(c(0, 0), 1.0, 1e-15);
}

TEST(CosineMatrix, OrthogonalRows) {
    const auto c = cosine_matrix(Matrix::identity(4), Matrix::identity(4));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(c(i, j), i == j ? 1.0 : 0.0);
}

TEST(CosineMatrix, MatchesLoopOracle) {
    Rng rng(15);
    const auto a = random_matrix(rng, 5, 8), b = random_matrix(rng, 7, 8);
    const auto c = cosine_matrix(a, b);
    ASSERT_EQ(c.rows(), 5u);
    ASSERT_EQ(c.cols(), 7u);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j)
            EXPECT_NEAR(c(i, j), static_cast<double>(oracle::cosine(oracle::widen(a.row(i)), oracle::widen(b.row(j)))),
                        1e-12);
}

TEST(CosineMatrix, Errors) {
    EXPECT_THROW(cosine_matrix(Matrix(2, 3, 1.0), Matrix(2, 4, 1.0)), DimensionError);
    EXPECT_THROW(cosine_matrix(Matrix(2, 3, 0.0), Matrix(2, 3, 1.0)), NumericError);
}

TEST(CosineMatrix, TransposeAndRangeProperty) {
    Rng rng(16);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + rng.below(12);
        const auto a = random_matrix(rng, 1 + rng.below(8), d), b = random_matrix(rng, 1 + rng.below(8), d);
        const auto ab = cosine_matrix(a, b), ba = cosine_matrix(b, a);
        for (std::size_t i = 0; i < ab.rows(); ++i)
            for (std::size_t j = 0; j < ab.cols(); ++j) {
                EXPECT_EQ(ab(i, j), ba(j, i));
                EXPECT_GE(ab(i, j), -1.0 - 1e-12);
                EXPECT_LE(ab(i, j), 1.0 + 1e-12);
            }
    }
}

TEST(CosineMatrix, ArgmaxIgnoresRowRescaling) {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_matrix(rng, 6, 5);
        const auto b = random_matrix(rng, 6, 5);
        const auto before = cosine_matrix(a, b);
        const std::size_t r = rng.below(6);
        const double s = std::exp(rng.uniform(-5.0, 5.0));
        for (double& x : a.row(r)) x *= s;
        const auto after = cosine_matrix(a, b);
        for (std::size_t i = 0; i < 6; ++i) {
            const auto r0 = before.row(i), r1 = after.row(i);
            EXPECT_EQ(std::max_element(r0.begin(), r0.end()) - r0.begin(),
                      std::max_element(r1.begin(), r1.end()) - r1.begin());
        }
    }
}

// ---------------------------------------------------------------------------

TEST(SoftmaxXent, UniformLogits) {
    EXPECT_NEAR(softmax_xent_rows(Matrix(2, 2)).loss, std::log(2.0), 1e-15);
    EXPECT_NEAR(softmax_xent_rows(Matrix(2, 2)).loss, 0.693147, 1e-6);
    for (std::size_t n : {1u, 3u, 5u, 8u}) EXPECT_NEAR(softmax_xent_rows(Matrix(n, n)).loss, std::log(double(n)), 1e-14);
}

TEST(SoftmaxXent, DiagonalClosedForm) {
    const auto z = Matrix::from_rows({{10.0, 0.0}, {0.0, 10.0}});
    EXPECT_NEAR(softmax_xent_rows(z).loss, std::log1p(std::exp(-10.0)), 1e-15);
    EXPECT_NEAR(softmax_xent_rows(z).loss, 4.5399e-5, 1e-9);
}

TEST(SoftmaxXent, Errors) {
    EXPECT_THROW(softmax_xent_rows(Matrix(2, 3)), DimensionError);
    Matrix bad(2, 2);
    bad(0, 1) = std::nan("");
    EXPECT_THROW(softmax_xent_rows(bad), NumericError);
}

TEST(SoftmaxXent, LargeLogitsStayFinite) {
    const auto z = Matrix::from_rows({{1000.0, -1000.0}, {0.0, 800.0}});
    const auto r = softmax_xent_rows(z);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_TRUE(r.dlogits.all_finite());
}

TEST(SoftmaxXent, GradientMatchesFiniteDifferences) {
    Rng rng(18);
    auto xent = [](const Matrix& z) {
        long double loss = 0;
        for (std::size_t i = 0; i < z.rows(); ++i) {
            long double s = 0;
            for (std::size_t j = 0; j < z.cols(); ++j) s += std::exp(static_cast<long double>(z(i, j)));
            loss += std::log(s) - z(i, i);
        }
        return loss / z.rows();
    };
    for (int trial = 0; trial < 10; ++trial) {
        auto z = random_matrix(rng, 8, 8, 2.0);
        const auto g = softmax_xent_rows(z).dlogits;
        long double diff = 0, norm = 0;
        for (std::size_t k = 0; k < 64; ++k) {
            const double orig = z.data()[k];
            z.data()[k] = orig + 1e-6;
            const auto up = xent(z);
            z.data()[k] = orig - 1e-6;
            const auto down = xent(z);
            z.data()[k] = orig;
            const long double fd = (up - down) / 2e-6L;
            diff += (fd - g.data()[k]) * (fd - g.data()[k]);
            norm += fd * fd;
        }
        EXPECT_LT(std::sqrt(diff / norm), 1e-6);
    }
}

// ---------------------------------------------------------------------------

TEST(Covariance, SampleDivisor) {
    const auto c = covariance(Matrix::from_rows({{1.0, 0.0}, {3.0, 0.0}}));
    EXPECT_DOUBLE_EQ(c(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(c(1, 1), 0.0);
}

TEST(Pca2, PointsOnXAxis) {
    const auto x = Matrix::from_rows({{-2.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {5.0, 0.0, 0.0}, {0.5, 0.0, 0.0}});
    const auto p = pca2(x);
    EXPECT_NEAR(std::fabs(p.components[0][0]), 1.0, 1e-12);
    EXPECT_NEAR(p.components[0][0], 1.0, 1e-12);  // sign convention: first nonzero coordinate positive
    EXPECT_NEAR(p.explained_fraction, 1.0, 1e-12);
    EXPECT_NEAR(p.eigenvalues[1], 0.0, 1e-9);
}

TEST(Pca2, SquareCornersTie) {
    const auto x = Matrix::from_rows({{1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}, {-1.0, -1.0}});
    const auto p = pca2(x);
    EXPECT_NEAR(p.explained_fraction, 1.0, 1e-12);
    EXPECT_NEAR(p.eigenvalues[0], p.eigenvalues[1], 1e-9);
    EXPECT_NEAR(dot(p.components[0], p.components[1]), 0.0, 1e-9);
    for (const auto& c : p.components) {
        const double first = std::fabs(c[0]) > 1e-12 ? c[0] : c[1];
        EXPECT_GT(first, 0.0);
    }
    // Deterministic tie-break: same answer every call.
    const auto q = pca2(x);
    EXPECT_EQ(p.components[0], q.components[0]);
}

TEST(Pca2, MatchesDenseEigensolver) {
    Rng rng(19);
    Matrix x(50, 10);
    // Distinct axis scales keep the spectrum well separated.
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 10; ++j) x(i, j) = rng.normal() * (10.0 - j);
    const auto p = pca2(x);
    const auto e = oracle::jacobi_eigen(covariance(x));
    EXPECT_NEAR(p.eigenvalues[0], e.values[0], 1e-8 * e.values[0]);
    EXPECT_NEAR(p.eigenvalues[1], e.values[1], 1e-8 * e.values[0]);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(std::fabs(dot(p.components[k], e.vectors[k])), 1.0, 1e-8);
    double trace = 0.0;
    for (double v : e.values) trace += v;
    EXPECT_NEAR(p.explained_fraction, (e.values[0] + e.values[1]) / trace, 1e-9);
}

TEST(Pca2, TranslationInvariance) {
    Rng rng(20);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_matrix(rng, 20, 5);
        for (std::size_t j = 0; j < 5; ++j)
            for (std::size_t i = 0; i < 20; ++i) x(i, j) *= 1.0 + j;
        auto y = x;
        for (std::size_t j = 0; j < 5; ++j) {
            const double shift = rng.uniform(-50.0, 50.0);
            for (std::size_t i = 0; i < 20; ++i) y(i, j) += shift;
        }
        const auto a = pca2(x), b = pca2(y);
        for (std::size_t i = 0; i < 20; ++i)
            for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a.coords(i, k), b.coords(i, k), 1e-7);
    }
}

TEST(Pca2, Errors) {
    EXPECT_THROW(pca2(Matrix(2, 3, 1.0)), DimensionError);
    EXPECT_THROW(pca2(Matrix(5, 1, 1.0)), DimensionError);
    const auto p = pca2(Matrix(4, 3, 2.0));
    EXPECT_EQ(p.explained_fraction, 0.0);
    for (double c : p.coords.data()) EXPECT_EQ(c, 0.0);
}

// ---------------------------------------------------------------------------

TEST(AnisotropyStats, CopiesOfOneVector) {
    Matrix x(6, 4);
    for (std::size_t i = 0; i < 6; ++i) x(i, 2) = 1.0;
    const auto s = anisotropy_stats(x, 1000, 0);
    EXPECT_NEAR(s.mean_pairwise_cosine, 1.0, 1e-15);
    EXPECT_NEAR(s.mean_norm_ratio, 1.0, 1e-15);
    EXPECT_TRUE(s.exhaustive);
    EXPECT_EQ(s.pairs_used, 15u);
}

TEST(AnisotropyStats, OrthonormalRows) {
    for (std::size_t n : {2u, 3u, 5u, 9u}) {
        const auto s = anisotropy_stats(Matrix::identity(n), 1000, 0);
        EXPECT_NEAR(s.mean_pairwise_cosine, 0.0, 1e-15);
        EXPECT_NEAR(s.mean_norm_ratio, 1.0 / std::sqrt(double(n)), 1e-15);
    }
}

TEST(AnisotropyStats, SamplesWhenTooManyPairs) {
    Rng rng(21);
    auto x = random_matrix(rng, 200, 6);
    const auto s = anisotropy_stats(x, 500, 3);
    EXPECT_FALSE(s.exhaustive);
    EXPECT_EQ(s.pairs_used, 500u);
    EXPECT_EQ(s.mean_pairwise_cosine, anisotropy_stats(x, 500, 3).mean_pairwise_cosine);
    EXPECT_LT(std::fabs(s.mean_pairwise_cosine - anisotropy_stats(x, 100000, 0).mean_pairwise_cosine), 0.05);
    EXPECT_EQ(s.pca2_coords.rows(), 200u);
    EXPECT_THROW(anisotropy_stats(Matrix(1, 3, 1.0), 10, 0), DimensionError);
}

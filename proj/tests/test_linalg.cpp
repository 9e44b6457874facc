#include <doctest.h>

#include "oracle.hpp"
#include "psfa/errors.hpp"
#include "psfa/linalg.hpp"

using namespace psfa;

namespace {

double residual(const Matrix& c, const EigenPair& p)
{
    return (c * p.vector - p.value * p.vector).norm();
}

} // namespace

TEST_CASE("power iteration on diag(4,1)")
{
    Matrix c = Vector(Eigen::Vector2d(4, 1)).asDiagonal();
    Vector u0(2);
    u0 << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    const EigenPair p = power_iteration_top(c, 50, u0);
    CHECK(p.value == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(std::abs(std::abs(p.vector(0)) - 1.0) < 1e-9);
    CHECK(std::abs(p.vector(1)) < 1e-9);
}

TEST_CASE("power iteration fixes every direction of the identity")
{
    std::mt19937_64 rng(5);
    const Vector u0 = random_unit_vector(3, rng);
    for (int iters : {1, 7, 100}) {
        const EigenPair p = power_iteration_top(Matrix::Identity(3, 3), iters, u0);
        CHECK(p.value == doctest::Approx(1.0).epsilon(1e-14));
        CHECK((p.vector - u0).norm() < 1e-14);
    }
}

TEST_CASE("power iteration matches a Jacobi oracle on a random PSD matrix")
{
    std::mt19937_64 rng(11);
    // a guaranteed spectral gap keeps 200 steps well inside the tolerance
    Vector spectrum(5);
    spectrum << 3.0, 1.5, 1.0, 0.5, 0.1;
    const Matrix c = oracle::psd_with_spectrum(spectrum, rng);
    const EigenPair p = power_iteration_top(c, 200, 3);
    const oracle::Eig ref = oracle::jacobi(c);
    CHECK(residual(c, p) < 1e-6);
    CHECK(p.value == doctest::Approx(ref.values(0)).epsilon(1e-9));
    CHECK(std::abs(std::abs(p.vector.dot(ref.vectors.col(0))) - 1.0) < 1e-9);
}

TEST_CASE("power iteration trace records every step")
{
    std::mt19937_64 rng(2);
    const Matrix c = oracle::random_psd(4, rng);
    const Vector u0 = random_unit_vector(4, rng);
    PowerIterationTrace trace;
    const EigenPair p = power_iteration_top(c, 6, u0, &trace);
    REQUIRE(trace.iterates.size() == 7);
    REQUIRE(trace.norms.size() == 6);
    CHECK(trace.degenerate_step == -1);
    for (int i = 0; i < 6; ++i) {
        const Vector cu = c * trace.iterates[i];
        CHECK(trace.norms[i] == doctest::Approx(cu.norm()).epsilon(1e-14));
        CHECK((trace.iterates[i + 1] - cu / cu.norm()).norm() < 1e-14);
    }
    CHECK(p.value == trace.norms.back());
}

TEST_CASE("power iteration on a vanishing product returns value zero")
{
    Matrix c = Matrix::Zero(2, 2);
    c(0, 0) = 1.0;
    Vector u0(2);
    u0 << 0.0, 1.0;
    PowerIterationTrace trace;
    const EigenPair p = power_iteration_top(c, 10, u0, &trace);
    CHECK(p.value == 0.0);
    CHECK((p.vector - u0).norm() == 0.0);
    CHECK(trace.degenerate_step == 0);
}

TEST_CASE("power iteration rejects non-symmetric input")
{
    Matrix c(2, 2);
    c << 1, 2, 0, 1;
    CHECK_THROWS_AS(power_iteration_top(c, 5, 1), DimensionError);
    CHECK_THROWS_AS(power_iteration_top(Matrix::Identity(2, 3), 5, 1), DimensionError);
}

TEST_CASE("deflation")
{
    Matrix c = Vector(Eigen::Vector2d(4, 1)).asDiagonal();
    const Matrix d = deflate(c, {4.0, Eigen::Vector2d(1, 0)});
    CHECK(max_abs_diff(d, Vector(Eigen::Vector2d(0, 1)).asDiagonal().toDenseMatrix()) == 0.0);

    const Matrix i4 = Matrix::Identity(4, 4);
    Vector e1 = Vector::Zero(4);
    e1(0) = 1.0;
    Matrix expect = i4;
    expect(0, 0) = 0.0;
    CHECK(max_abs_diff(deflate(i4, {1.0, e1}), expect) == 0.0);

    std::mt19937_64 rng(17);
    const Matrix r = oracle::random_psd(6, rng);
    const oracle::Eig ref = oracle::jacobi(r);
    Matrix a = r;
    for (Index k = 0; k < 6; ++k)
        a = deflate(a, {ref.values(k), ref.vectors.col(k)});
    CHECK(a.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("eigendecompose diag(9,4,1)")
{
    const Matrix c = Vector(Eigen::Vector3d(9, 4, 1)).asDiagonal();
    const auto pairs = eigendecompose(c, 3, 100, 4);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].value == doctest::Approx(9.0).epsilon(1e-6));
    CHECK(pairs[1].value == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(pairs[2].value == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("eigendecompose rank one")
{
    Vector v(4);
    v << 1.0, -2.0, 0.5, 3.0;
    const auto pairs = eigendecompose(v * v.transpose(), 1, 20, 9);
    CHECK(pairs[0].value == doctest::Approx(v.squaredNorm()).epsilon(1e-12));
    CHECK(std::abs(std::abs(pairs[0].vector.dot(v.normalized())) - 1.0) < 1e-12);
}

TEST_CASE("eigendecompose reconstructs a random PSD matrix")
{
    std::mt19937_64 rng(21);
    Vector spectrum(10);
    for (Index k = 0; k < 10; ++k)
        spectrum(k) = 10.0 * std::pow(0.6, static_cast<double>(k));
    const Matrix c = oracle::psd_with_spectrum(spectrum, rng);
    const auto pairs = eigendecompose(c, 10, 100, 1);
    Matrix rebuilt = Matrix::Zero(10, 10);
    for (const auto& p : pairs)
        rebuilt += p.value * p.vector * p.vector.transpose();
    CHECK(max_abs_diff(rebuilt, c) < 1e-4);

    // properties: non-increasing values, unit vectors, small residual with this gap
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        CHECK(std::abs(pairs[k].vector.norm() - 1.0) < 1e-10);
        if (k > 0)
            CHECK(pairs[k].value <= pairs[k - 1].value);
        CHECK(residual(c, pairs[k]) < 1e-6);
    }
}

TEST_CASE("eigendecompose is deterministic per seed")
{
    std::mt19937_64 rng(4);
    const Matrix c = oracle::random_psd(5, rng);
    const auto a = eigendecompose(c, 3, 15, 42);
    const auto b = eigendecompose(c, 3, 15, 42);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(a[k].value == b[k].value);
        CHECK(a[k].vector == b[k].vector);
    }
}

TEST_CASE("whitening matrix closed forms")
{
    const Matrix c = Vector(Eigen::Vector2d(4, 1)).asDiagonal();
    const auto pairs = eigendecompose(c, 2, 60, 1);
    Matrix expect = Matrix::Zero(2, 2);
    expect(0, 0) = 0.5;
    expect(1, 1) = 1.0;
    CHECK(max_abs_diff(whitening_matrix(pairs, 0.0), expect) < 1e-12);

    const auto ident = eigendecompose(Matrix::Identity(4, 4), 4, 10, 3);
    CHECK(max_abs_diff(whitening_matrix(ident, 0.0), Matrix::Identity(4, 4)) < 1e-12);
}

TEST_CASE("whitening matrix whitens a well-conditioned covariance")
{
    std::mt19937_64 rng(8);
    Vector spectrum(6);
    spectrum << 5.0, 2.0, 1.0, 0.3, 0.05, 0.01;
    const Matrix c = oracle::psd_with_spectrum(spectrum, rng);
    const Matrix w = whitening_matrix(eigendecompose(c, 6, 300, 2), 1e-8);
    CHECK(max_abs_diff(w * c * w.transpose(), Matrix::Identity(6, 6)) < 1e-4);
    CHECK(is_symmetric(w));
}

TEST_CASE("whitening matrix does not depend on the basis of a degenerate eigenspace")
{
    Vector spectrum(4);
    spectrum << 3.0, 1.0, 1.0, 0.5;
    std::mt19937_64 rng(30);
    const Matrix c = oracle::psd_with_spectrum(spectrum, rng);
    const Matrix w1 = whitening_matrix(eigendecompose(c, 4, 400, 1), 1e-8);
    const Matrix w2 = whitening_matrix(eigendecompose(c, 4, 400, 99), 1e-8);
    CHECK(max_abs_diff(w1, w2) < 1e-8);
}

TEST_CASE("whitening matrix clamps negative values")
{
    std::vector<EigenPair> pairs{{-1e-12, Eigen::Vector2d(1, 0)}, {1.0, Eigen::Vector2d(0, 1)}};
    const Matrix w = whitening_matrix(pairs, 1e-8);
    CHECK(w(0, 0) == doctest::Approx(1e4).epsilon(1e-12));
    CHECK_THROWS_AS(whitening_matrix(pairs, 0.0), ConditioningError);
}

TEST_CASE("covariance and EMA mixture")
{
    std::mt19937_64 rng(3);
    const Matrix x = oracle::randn(4, 50, rng);
    CHECK(max_abs_diff(covariance(x), oracle::cov(x)) < 1e-13);
    CHECK(row_means(centered(x)).cwiseAbs().maxCoeff() < 1e-14);

    const Matrix c = covariance(x);
    const Matrix prev = oracle::random_psd(4, rng);
    CHECK(max_abs_diff(covariance_ema(c, prev, 0.0), c) == 0.0);
    CHECK(max_abs_diff(covariance_ema(c, Matrix::Zero(4, 4), 0.5), c / 2.0) < 1e-15);
    CHECK_THROWS_AS(covariance_ema(c, prev, 1.0), ConfigError);
    CHECK_THROWS_AS(covariance_ema(c, prev, -0.1), ConfigError);
}

TEST_CASE("random unit vectors lie on the sphere")
{
    std::mt19937_64 rng(1);
    for (int k = 0; k < 20; ++k)
        CHECK(std::abs(random_unit_vector(7, rng).norm() - 1.0) < 1e-14);
}

#include <doctest.h>

#include "oracle.hpp"
#include "psfa/errors.hpp"
#include "psfa/optimizer.hpp"

using namespace psfa;

namespace {

struct Param {
    Matrix value;
    Matrix grad;

    std::vector<ParamRef> refs() { return {{"w", &value, &grad}}; }
};

// Independent scalar Nadam, written from the update rule.
struct ScalarNadam {
    double lr, b1, b2, eps;
    double m = 0.0, v = 0.0;
    int t = 0;

    double step(double w, double g)
    {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = b1 * m / (1 - std::pow(b1, t + 1)) + (1 - b1) * g / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return w - lr * mh / (std::sqrt(vh) + eps);
    }
};

} // namespace

TEST_CASE("zero gradient leaves parameters unchanged")
{
    Param p{Matrix::Constant(3, 2, 0.7), Matrix::Zero(3, 2)};
    OptimState st;
    auto refs = p.refs();
    for (int k = 0; k < 10; ++k)
        nadam_step(refs, st);
    CHECK(p.value == Matrix::Constant(3, 2, 0.7));
}

TEST_CASE("without moment averaging the step is a signed lr step")
{
    Param p{Matrix::Zero(1, 3), Matrix(1, 3)};
    p.grad << 2.0, -0.5, 1e-3;
    OptimState st;
    st.hyper = {0.1, 0.0, 0.0, 0.0, 0.0};
    auto refs = p.refs();
    nadam_step(refs, st);
    CHECK(p.value(0) == doctest::Approx(-0.1).epsilon(1e-12));
    CHECK(p.value(1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p.value(2) == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("quadratic bowl converges")
{
    Param p{Matrix(2, 1), Matrix(2, 1)};
    p.value << 1.0, -1.0;
    OptimState st;
    st.hyper.lr = 0.05;
    auto refs = p.refs();
    std::vector<double> loss;
    int reached = -1;
    for (int k = 0; k < 500; ++k) {
        p.grad = 2.0 * p.value;
        loss.push_back(p.value.squaredNorm());
        nadam_step(refs, st);
        if (reached < 0 && p.value.norm() < 1e-3)
            reached = k;
    }
    CHECK(reached >= 0);
    // windowed means after the transient never go up
    for (std::size_t start = 100; start + 100 <= loss.size(); start += 50) {
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < 50; ++i) {
            a += loss[start + i];
            b += loss[start + 50 + i];
        }
        CHECK(b <= a);
    }
}

TEST_CASE("scalar bowl from one reaches 1e-3 within 500 steps")
{
    Param p{Matrix::Constant(1, 1, 1.0), Matrix(1, 1)};
    OptimState st;
    st.hyper.lr = 0.05;
    auto refs = p.refs();
    bool reached = false;
    for (int k = 0; k < 500 && !reached; ++k) {
        p.grad = 2.0 * p.value;
        nadam_step(refs, st);
        reached = std::abs(p.value(0)) < 1e-3;
    }
    CHECK(reached);
}

TEST_CASE("matches an independent scalar loop")
{
    std::mt19937_64 rng(5);
    const Matrix start = oracle::randn(3, 3, rng);
    Param p{start, Matrix(3, 3)};
    OptimState st;
    st.hyper = {0.01, 0.9, 0.999, 1e-8, 0.0};
    std::vector<ScalarNadam> ref(9, ScalarNadam{0.01, 0.9, 0.999, 1e-8});
    Matrix w = start;
    auto refs = p.refs();
    for (int k = 0; k < 40; ++k) {
        // gradient of sum(w^4)/4 + sin(w)
        p.grad = p.value.array().cube() + p.value.array().cos();
        nadam_step(refs, st);
        for (Index i = 0; i < 9; ++i) {
            const double g = std::pow(w(i), 3) + std::cos(w(i));
            w(i) = ref[static_cast<std::size_t>(i)].step(w(i), g);
        }
    }
    CHECK(max_abs_diff(p.value, w) < 1e-12);
    CHECK(st.step == 40);
}

TEST_CASE("clipping bounds each gradient entry")
{
    Param a{Matrix::Zero(1, 1), Matrix::Constant(1, 1, 1e6)};
    Param b{Matrix::Zero(1, 1), Matrix::Constant(1, 1, 0.5)};
    OptimState sa, sb;
    sa.hyper.clip = 0.5;
    auto ra = a.refs(), rb = b.refs();
    for (int k = 0; k < 5; ++k) {
        nadam_step(ra, sa);
        nadam_step(rb, sb);
    }
    CHECK(a.value(0) == b.value(0));
}

TEST_CASE("non-finite gradients raise")
{
    Param p{Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
    p.grad(1, 0) = std::numeric_limits<double>::quiet_NaN();
    OptimState st;
    auto refs = p.refs();
    CHECK_THROWS_AS(nadam_step(refs, st), DivergenceError);
    p.grad(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(nadam_step(refs, st), DivergenceError);
    CHECK(p.value.isZero(0.0));
}

TEST_CASE("optimizer steps are deterministic")
{
    std::mt19937_64 rng(8);
    const Matrix g = oracle::randn(4, 4, rng);
    Param a{Matrix::Zero(4, 4), g}, b{Matrix::Zero(4, 4), g};
    OptimState sa, sb;
    auto ra = a.refs(), rb = b.refs();
    for (int k = 0; k < 20; ++k) {
        nadam_step(ra, sa);
        nadam_step(rb, sb);
    }
    CHECK(a.value == b.value);
}

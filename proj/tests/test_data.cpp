#include <doctest.h>

#include <sstream>

#include "oracle.hpp"
#include "psfa/data.hpp"
#include "psfa/errors.hpp"

using namespace psfa;

namespace {

constexpr double kPi = 3.14159265358979323846;

// (2/N) sum_k x_k cos(m t_k) per harmonic, over whole periods
Matrix harmonic_coefficients(const Matrix& x, Index degree, double step)
{
    const Index n = x.cols();
    Matrix basis(degree, n);
    for (Index k = 0; k < n; ++k)
        for (Index m = 0; m < degree; ++m)
            basis(m, k) = std::cos(static_cast<double>(m + 1) * static_cast<double>(k) * step);
    return 2.0 / static_cast<double>(n) * x * basis.transpose();
}

} // namespace

TEST_CASE("a single harmonic without noise is a scaled cosine")
{
    const TrigConfig tc{4, 1, 200, 0.05, 0.0, 7};
    const Matrix x = gen_trig(tc).data;
    for (Index k = 0; k < 200; ++k)
        for (Index i = 0; i < 4; ++i)
            CHECK(x(i, k) == doctest::Approx(x(i, 0) * std::cos(0.05 * static_cast<double>(k))).epsilon(1e-12));
    CHECK(x.col(0).norm() > 0.0);
}

TEST_CASE("generation is deterministic per seed")
{
    TrigConfig tc{10, 5, 300, 0.02, 0.01, 11};
    CHECK(gen_trig(tc).data == gen_trig(tc).data);
    TrigConfig other = tc;
    other.seed = 12;
    CHECK(gen_trig(tc).data != gen_trig(other).data);
}

TEST_CASE("variance splits between the harmonics and the noise")
{
    const Index n = 4000;
    const TrigConfig tc{500, 20, n, 2.0 * kPi / static_cast<double>(n), 0.01, 3};
    const Matrix x = gen_trig(tc).data;
    // E var per coordinate = degree / 2 + noise variance
    const double expected = 20.0 / 2.0 + 0.01;
    const double measured = oracle::cov(x).diagonal().mean();
    CHECK(std::abs(measured - expected) < 0.1 * expected);

    // removing the projected harmonics leaves the noise
    const Matrix coeff = harmonic_coefficients(x, 20, tc.step);
    Matrix fit = Matrix::Zero(500, n);
    for (Index k = 0; k < n; ++k)
        for (Index m = 0; m < 20; ++m)
            fit.col(k) += coeff.col(m) * std::cos(static_cast<double>(m + 1) * static_cast<double>(k) * tc.step);
    const double residual = (x - fit).array().square().mean();
    CHECK(std::abs(residual - 0.01) < 0.1 * 0.01);
    // coefficients are standard normal draws
    CHECK(std::abs(coeff.array().square().mean() - 1.0) < 0.1);
}

TEST_CASE("default config is the full-size dataset")
{
    const TrigConfig tc;
    CHECK(tc.dim == 500);
    CHECK(tc.degree == 100);
    CHECK(tc.length == 10000);
    CHECK(tc.step == doctest::Approx(2.0 * kPi / 10000.0).epsilon(1e-15));
    CHECK(tc.noise_variance == 0.01);
    const Matrix x = gen_trig(tc).data;
    CHECK(x.rows() == 500);
    CHECK(x.cols() == 10000);
}

TEST_CASE("config validation and JSON")
{
    TrigConfig bad;
    bad.dim = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrigConfig{};
    bad.step = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrigConfig{};
    bad.noise_variance = -1.0;
    CHECK_THROWS_AS(gen_trig(bad), ConfigError);

    const TrigConfig tc = trig_config_from_json({{"dim", 3}, {"degree", 2}, {"length", 400}, {"step", 0}});
    CHECK(tc.step == doctest::Approx(2.0 * kPi / 400.0).epsilon(1e-15));
    const TrigConfig back = trig_config_from_json(to_json(TrigConfig{5, 4, 100, 0.3, 0.2, 9}));
    CHECK(back.dim == 5);
    CHECK(back.step == 0.3);
    CHECK(back.noise_variance == 0.2);
    CHECK(back.seed == 9);
    CHECK_THROWS_AS(trig_config_from_json({{"dim", "many"}}), ConfigError);
}

TEST_CASE("distortion")
{
    Dataset ds;
    ds.data.resize(1, 3);
    ds.data << 0.0, 1.0, -2.0;
    const Dataset d = distort(ds);
    CHECK(d.data(0, 0) == doctest::Approx(std::cos(1.0)));
    CHECK(d.data(0, 1) == doctest::Approx(std::cos(std::exp(1.0))));
    CHECK(d.data(0, 2) == doctest::Approx(std::cos(std::exp(-2.0))));
    CHECK(d.data.cwiseAbs().maxCoeff() <= 1.0);

    ds.data(0, 1) = std::log(kPi / 2.0);
    CHECK(std::abs(distort(ds).data(0, 1)) < 1e-12);

    ds.data(0, 1) = 701.0;
    CHECK_THROWS_AS(distort(ds), RangeError);
    ds.data(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(distort(ds), RangeError);
}

TEST_CASE("text and binary round trips are exact")
{
    TrigConfig tc{7, 3, 50, 0.1, 0.5, 2};
    const Dataset ds = gen_trig(tc);
    std::stringstream text;
    write_dataset(text, ds);
    const Dataset t = read_dataset(text);
    CHECK(t.data == ds.data);
    CHECK(t.meta == ds.meta);

    std::stringstream bin;
    write_dataset_binary(bin, ds);
    const Dataset b = read_dataset_binary(bin);
    CHECK(b.data == ds.data);
    CHECK(b.meta == ds.meta);
}

TEST_CASE("malformed dataset files")
{
    std::stringstream truncated("dims=2 n=3\n1 2\n3 4\n");
    CHECK_THROWS_AS(read_dataset(truncated), ParseError);
    std::stringstream wide("dims=2 n=1\n1 2 3\n");
    CHECK_THROWS_AS(read_dataset(wide), ParseError);
    std::stringstream narrow("dims=2 n=1\n1\n");
    CHECK_THROWS_AS(read_dataset(narrow), ParseError);
    std::stringstream header("2 3\n");
    CHECK_THROWS_AS(read_dataset(header), ParseError);
    std::stringstream number("dims=1 n=1\nabc\n");
    CHECK_THROWS_AS(read_dataset(number), ParseError);
    std::stringstream empty("");
    CHECK_THROWS_AS(read_dataset(empty), ParseError);

    TrigConfig tc{3, 2, 10, 0.1, 0.0, 1};
    std::stringstream bin;
    write_dataset_binary(bin, gen_trig(tc));
    std::string bytes = bin.str();
    bytes.resize(bytes.size() - 5);
    std::stringstream cut(bytes);
    CHECK_THROWS_AS(read_dataset_binary(cut), IoError);
    std::stringstream magic("NOTADS01xxxxxxxxxxxxxxxxxxxxxxxx");
    CHECK_THROWS_AS(read_dataset_binary(magic), IoError);
    CHECK_THROWS_AS(load_dataset("/nonexistent/data.txt"), IoError);
}

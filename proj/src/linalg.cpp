#include "psfa/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "psfa/errors.hpp"

namespace psfa {

Vector random_unit_vector(Index n, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(n);
    double norm = 0.0;
    // A zero draw has probability zero, but keep sampling rather than divide by it.
    while (norm == 0.0) {
        for (Index i = 0; i < n; ++i)
            v(i) = normal(rng);
        norm = v.norm();
    }
    return v / norm;
}

namespace {

EigenPair power_iteration_unchecked(const Matrix& c, int iters, const Vector& start,
                                    PowerIterationTrace* trace)
{
    Vector u = start;
    double lambda = 0.0;
    if (trace) {
        trace->iterates.clear();
        trace->norms.clear();
        trace->degenerate_step = -1;
        trace->iterates.reserve(static_cast<std::size_t>(iters) + 1);
        trace->norms.reserve(static_cast<std::size_t>(iters));
        trace->iterates.push_back(u);
    }
    for (int i = 0; i < iters; ++i) {
        Vector v = c * u;
        const double norm = v.norm();
        if (norm == 0.0) {
            if (trace)
                trace->degenerate_step = i;
            return {0.0, u};
        }
        lambda = norm;
        u = v / norm;
        if (trace) {
            trace->norms.push_back(norm);
            trace->iterates.push_back(u);
        }
    }
    return {lambda, u};
}

} // namespace

EigenPair power_iteration_top(const Matrix& c, int iters, const Vector& start, PowerIterationTrace* trace)
{
    require_symmetric(c, "power_iteration_top");
    if (iters < 1)
        throw DimensionError("power_iteration_top: iteration count must be at least 1");
    if (start.size() != c.rows())
        throw DimensionError("power_iteration_top: start vector length " + std::to_string(start.size()) +
                             " does not match matrix size " + std::to_string(c.rows()));
    return power_iteration_unchecked(c, iters, start, trace);
}

EigenPair power_iteration_top(const Matrix& c, int iters, std::uint64_t seed)
{
    require_symmetric(c, "power_iteration_top");
    std::mt19937_64 rng(seed);
    return power_iteration_top(c, iters, random_unit_vector(c.rows(), rng));
}

Matrix deflate(const Matrix& c, const EigenPair& pair)
{
    if (c.rows() != c.cols() || pair.vector.size() != c.rows())
        throw DimensionError("deflate: eigenvector length " + std::to_string(pair.vector.size()) +
                             " does not match " + std::to_string(c.rows()) + "x" + std::to_string(c.cols()));
    return c - pair.value * pair.vector * pair.vector.transpose();
}

std::vector<EigenPair> eigendecompose(const Matrix& c, int iters, const std::vector<Vector>& starts,
                                      std::vector<PowerIterationTrace>* traces)
{
    require_symmetric(c, "eigendecompose");
    const auto k = static_cast<Index>(starts.size());
    if (k < 1 || k > c.rows())
        throw DimensionError("eigendecompose: requested " + std::to_string(k) + " pairs from a " +
                             std::to_string(c.rows()) + "-dimensional matrix");
    if (iters < 1)
        throw DimensionError("eigendecompose: iteration count must be at least 1");
    if (traces)
        traces->assign(starts.size(), {});

    std::vector<EigenPair> pairs;
    pairs.reserve(starts.size());
    Matrix remaining = c;
    for (std::size_t j = 0; j < starts.size(); ++j) {
        if (starts[j].size() != c.rows())
            throw DimensionError("eigendecompose: start vector has wrong length");
        pairs.push_back(power_iteration_unchecked(remaining, iters, starts[j], traces ? &(*traces)[j] : nullptr));
        if (j + 1 < starts.size())
            remaining = deflate(remaining, pairs.back());
    }
    return pairs;
}

std::vector<EigenPair> eigendecompose(const Matrix& c, int k, int iters, std::uint64_t seed)
{
    require_symmetric(c, "eigendecompose");
    if (k < 1 || k > c.rows())
        throw DimensionError("eigendecompose: requested " + std::to_string(k) + " pairs from a " +
                             std::to_string(c.rows()) + "-dimensional matrix");
    std::mt19937_64 rng(seed);
    std::vector<Vector> starts;
    starts.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j)
        starts.push_back(random_unit_vector(c.rows(), rng));
    return eigendecompose(c, iters, starts);
}

Matrix whitening_matrix(const std::vector<EigenPair>& pairs, double eps)
{
    if (pairs.empty())
        throw DimensionError("whitening_matrix: no eigenpairs");
    const Index n = pairs.front().vector.size();
    Matrix w = Matrix::Zero(n, n);
    for (const auto& p : pairs) {
        if (p.vector.size() != n)
            throw DimensionError("whitening_matrix: eigenvectors of differing length");
        const double shifted = std::max(p.value, 0.0) + eps;
        if (!(shifted > 0.0))
            throw ConditioningError("whitening_matrix: eigenvalue " + std::to_string(p.value) +
                                    " plus eps is not positive");
        w.noalias() += (1.0 / std::sqrt(shifted)) * p.vector * p.vector.transpose();
    }
    return w;
}

Matrix covariance_ema(const Matrix& batch, const Matrix& previous, double gamma)
{
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw ConfigError("covariance_ema: gamma must lie in [0, 1), got " + std::to_string(gamma));
    if (batch.rows() != previous.rows() || batch.cols() != previous.cols())
        throw DimensionError("covariance_ema: shape mismatch");
    return (1.0 - gamma) * batch + gamma * previous;
}

Vector row_means(const Matrix& x)
{
    return x.rowwise().mean();
}

Matrix centered(const Matrix& x)
{
    return x.colwise() - row_means(x);
}

Matrix covariance(const Matrix& x)
{
    if (x.cols() == 0)
        throw DimensionError("covariance: empty sample set");
    const Matrix xc = centered(x);
    return (xc * xc.transpose()) / static_cast<double>(x.cols());
}

double max_abs_diff(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("max_abs_diff: shape mismatch");
    if (a.size() == 0)
        return 0.0;
    return (a - b).cwiseAbs().maxCoeff();
}

bool is_symmetric(const Matrix& c, double tol)
{
    if (c.rows() != c.cols())
        return false;
    if (c.size() == 0)
        return true;
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    return (c - c.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

void require_symmetric(const Matrix& c, const char* what)
{
    if (c.rows() != c.cols())
        throw DimensionError(std::string(what) + ": matrix is " + std::to_string(c.rows()) + "x" +
                             std::to_string(c.cols()) + ", expected square");
    if (!is_symmetric(c))
        throw DimensionError(std::string(what) + ": matrix is not symmetric");
}

} // namespace psfa

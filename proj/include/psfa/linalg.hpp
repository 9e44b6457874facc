#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace psfa {

/// Dense double matrix. Data matrices are stored features x samples, one sample per column.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct EigenPair {
    double value = 0.0;
    Vector vector;
};

/// Everything needed to re-apply a batch whitening transform to new points.
struct WhiteningState {
    Vector mean;
    std::vector<EigenPair> eigenpairs; // descending by value
    Matrix whitening;                  // symmetric e x e
    int num_iterations = 0;
    double eps = 0.0;
};

/// Iterates recorded by a power iteration run, used for reverse-mode differentiation.
/// iterates[0] is the start vector, iterates[i+1] = C iterates[i] / norms[i].
/// If the product vanished at step s, degenerate_step == s and iteration stopped there.
struct PowerIterationTrace {
    std::vector<Vector> iterates;
    std::vector<double> norms;
    int degenerate_step = -1;
};

/// Symmetry tolerance used by the checked entry points (relative to the largest entry).
inline constexpr double kSymmetryTolerance = 1e-8;

/// Default eigenvalue shift inside the inverse square root.
inline constexpr double kDefaultWhiteningEps = 1e-8;

/// Uniform draw from the unit sphere in R^n.
Vector random_unit_vector(Index n, std::mt19937_64& rng);

/// Dominant eigenpair of a symmetric PSD matrix after a fixed number of power steps.
/// The returned value is |C u| from the final step; no convergence test is made.
/// A vanishing product yields value 0 with the current vector.
EigenPair power_iteration_top(const Matrix& c, int iters, const Vector& start,
                              PowerIterationTrace* trace = nullptr);
EigenPair power_iteration_top(const Matrix& c, int iters, std::uint64_t seed);

/// C - value * u u^T
Matrix deflate(const Matrix& c, const EigenPair& pair);

/// k leading eigenpairs by alternating power iteration and deflation, `iters` steps per pair.
/// Start vectors are drawn one per pair from a generator seeded with `seed`.
std::vector<EigenPair> eigendecompose(const Matrix& c, int k, int iters, std::uint64_t seed);

/// Same, with explicit start vectors (one per pair). Traces are filled when non-null.
std::vector<EigenPair> eigendecompose(const Matrix& c, int iters, const std::vector<Vector>& starts,
                                      std::vector<PowerIterationTrace>* traces = nullptr);

/// W = sum_j (max(value_j, 0) + eps)^(-1/2) u_j u_j^T
Matrix whitening_matrix(const std::vector<EigenPair>& pairs, double eps);

/// (1 - gamma) * batch + gamma * previous. Only `batch` is parameter dependent.
Matrix covariance_ema(const Matrix& batch, const Matrix& previous, double gamma);

Vector row_means(const Matrix& x);
Matrix centered(const Matrix& x);

/// Covariance with 1/N normalization over columns (samples).
Matrix covariance(const Matrix& x);

/// Largest |A_ij - B_ij|.
double max_abs_diff(const Matrix& a, const Matrix& b);

bool is_symmetric(const Matrix& c, double tol = kSymmetryTolerance);

/// Throws DimensionError unless `c` is square and symmetric within tolerance.
void require_symmetric(const Matrix& c, const char* what);

} // namespace psfa

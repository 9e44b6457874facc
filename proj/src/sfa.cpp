#include "psfa/sfa.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "psfa/errors.hpp"
#include "psfa/io.hpp"

namespace psfa {

Matrix SfaSolution::apply(const Matrix& x) const
{
    if (x.rows() != mean.size())
        throw DimensionError("SfaSolution::apply: expected " + std::to_string(mean.size()) + " input rows, got " +
                             std::to_string(x.rows()));
    return projection * (x.colwise() - mean);
}

namespace {

Matrix difference_covariance(const Matrix& y)
{
    const Index n = y.cols();
    const Matrix dy = y.rightCols(n - 1) - y.leftCols(n - 1);
    return (dy * dy.transpose()) / static_cast<double>(n - 1);
}

} // namespace

SfaSolution closed_form_sfa(const Matrix& x, Index e, double eps)
{
    const Index d = x.rows();
    const Index n = x.cols();
    if (n <= d)
        throw DimensionError("closed_form_sfa: need more samples than dimensions (" + std::to_string(n) +
                             " samples, " + std::to_string(d) + " dimensions)");
    if (e < 1 || e > d)
        throw DimensionError("closed_form_sfa: cannot extract " + std::to_string(e) + " features from " +
                             std::to_string(d) + " dimensions");

    SfaSolution sol;
    sol.mean = row_means(x);
    const Matrix xc = x.colwise() - sol.mean;
    const Matrix cov = (xc * xc.transpose()) / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Matrix> cov_eig(cov);
    if (cov_eig.info() != Eigen::Success)
        throw ConditioningError("closed_form_sfa: covariance eigendecomposition failed");
    const Vector& lambda = cov_eig.eigenvalues(); // ascending
    const double lambda_max = lambda(d - 1);
    Index rank = 0;
    for (Index i = 0; i < d; ++i)
        if (lambda(i) > kRankTolerance * lambda_max)
            ++rank;
    if (!(lambda_max > 0.0) || rank < e)
        throw ConditioningError("closed_form_sfa: covariance is singular (numerical rank " + std::to_string(rank) +
                                ", " + std::to_string(e) + " features requested)");

    // S = (D + eps)^(-1/2) U^T over the rank-r eigenspace maps centered data to white coordinates.
    // Directions below the rank tolerance are dropped rather than blown up.
    const Vector inv_sqrt = (lambda.tail(rank).array() + eps).rsqrt().matrix();
    const Matrix sphere = inv_sqrt.asDiagonal() * cov_eig.eigenvectors().rightCols(rank).transpose();
    const Matrix z = sphere * xc;

    Eigen::SelfAdjointEigenSolver<Matrix> diff_eig(difference_covariance(z));
    if (diff_eig.info() != Eigen::Success)
        throw ConditioningError("closed_form_sfa: difference covariance eigendecomposition failed");

    sol.projection = diff_eig.eigenvectors().leftCols(e).transpose() * sphere;
    sol.delta_values = diff_eig.eigenvalues().head(e);

    const Vector first = sol.projection * xc.col(0);
    for (Index i = 0; i < e; ++i)
        if (first(i) < 0.0)
            sol.projection.row(i) *= -1.0;
    return sol;
}

Vector delta_values(const Matrix& y)
{
    if (y.cols() < 2)
        throw DimensionError("delta_values: need at least two samples");
    const Index n = y.cols();
    const Matrix dy = y.rightCols(n - 1) - y.leftCols(n - 1);
    return dy.array().square().rowwise().sum().matrix() / static_cast<double>(n - 1);
}

SlownessOrdering order_by_slowness(const Matrix& y)
{
    if (y.cols() < 2)
        throw DimensionError("order_by_slowness: need at least two samples");
    SlownessOrdering out;
    const Index e = y.rows();
    out.whiteness_error = max_abs_diff(covariance(y), Matrix::Identity(e, e));
    out.approximately_white = out.whiteness_error < 0.05;

    Eigen::SelfAdjointEigenSolver<Matrix> eig(difference_covariance(y));
    out.rotation = eig.eigenvectors().transpose();
    out.ordered = out.rotation * y;
    out.delta_values = delta_values(out.ordered);
    return out;
}

void write_sfa_solution(std::ostream& out, const SfaSolution& solution)
{
    out << "# closed-form SFA solution: y = projection * (x - mean)\n";
    write_matrix_block(out, "mean", solution.mean);
    write_matrix_block(out, "projection", solution.projection);
    write_matrix_block(out, "delta_values", solution.delta_values);
}

SfaSolution read_sfa_solution(std::istream& in)
{
    LineReader reader(in);
    SfaSolution sol;
    sol.mean = read_matrix_block(reader, "mean");
    sol.projection = read_matrix_block(reader, "projection");
    sol.delta_values = read_matrix_block(reader, "delta_values");
    if (sol.mean.cols() != 1 || sol.delta_values.cols() != 1 || sol.projection.cols() != sol.mean.size() ||
        sol.projection.rows() != sol.delta_values.size())
        throw ParseError("inconsistent SFA solution block shapes", reader.line_number());
    return sol;
}

void save_sfa_solution(const std::string& path, const SfaSolution& solution)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    write_sfa_solution(out, solution);
    if (!out)
        throw IoError("failed writing '" + path + "'");
}

SfaSolution load_sfa_solution(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    return read_sfa_solution(in);
}

} // namespace psfa

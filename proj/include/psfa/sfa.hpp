#pragma once

#include <iosfwd>
#include <string>

#include "psfa/linalg.hpp"

namespace psfa {

/// Closed-form linear SFA: y = projection * (x - mean).
struct SfaSolution {
    Vector mean;
    Matrix projection;   // e x d
    Vector delta_values; // ascending

    Matrix apply(const Matrix& x) const;
};

/// Eigenvalues below this fraction of the largest count as zero for the rank check.
inline constexpr double kRankTolerance = 1e-12;

/// Centers and whitens `x` (features x samples, eps added to the covariance diagonal), then
/// projects onto the e minor components of the covariance of the one-step differences.
/// Each feature's sign is chosen so that its first sample is non-negative.
SfaSolution closed_form_sfa(const Matrix& x, Index e, double eps = kDefaultWhiteningEps);

/// Per-feature mean squared one-step difference over the N-1 transitions.
Vector delta_values(const Matrix& y);

struct SlownessOrdering {
    Matrix ordered;  // rotation * y
    Matrix rotation; // orthogonal e x e
    Vector delta_values;
    /// max |cov(y) - I|; inputs far from white (> 0.05) get approximately_white = false.
    double whiteness_error = 0.0;
    bool approximately_white = true;
};

/// Rotates y onto the eigenvectors of its difference covariance, slowest first.
SlownessOrdering order_by_slowness(const Matrix& y);

void write_sfa_solution(std::ostream& out, const SfaSolution& solution);
SfaSolution read_sfa_solution(std::istream& in);
void save_sfa_solution(const std::string& path, const SfaSolution& solution);
SfaSolution load_sfa_solution(const std::string& path);

} // namespace psfa

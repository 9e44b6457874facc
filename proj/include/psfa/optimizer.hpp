#pragma once

#include <span>
#include <vector>

#include "psfa/diff.hpp"

namespace psfa {

struct NadamConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Element-wise gradient clipping threshold; 0 disables it.
    double clip = 0.0;
};

struct OptimState {
    NadamConfig hyper;
    std::vector<Matrix> m; // first moments, one per parameter
    std::vector<Matrix> v; // second moments
    long step = 0;
};

/// Adam with Nesterov momentum (Dozat 2016, without the momentum warm-up schedule):
///
///   m_t = b1 m + (1 - b1) g
///   v_t = b2 v + (1 - b2) g^2
///   m^  = b1 m_t / (1 - b1^(t+1)) + (1 - b1) g / (1 - b1^t)
///   v^  = v_t / (1 - b2^t)
///   p  -= lr m^ / (sqrt(v^) + eps)
///
/// Throws DivergenceError naming the parameter if a gradient is not finite.
void nadam_step(std::span<const ParamRef> params, OptimState& state);

} // namespace psfa

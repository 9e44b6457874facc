#include "psfa/optimizer.hpp"

#include <cmath>

#include "psfa/errors.hpp"

namespace psfa {

void nadam_step(std::span<const ParamRef> params, OptimState& state)
{
    for (const auto& p : params) {
        if (!p.grad->allFinite())
            throw DivergenceError("non-finite gradient for parameter " + p.name);
        if (p.grad->rows() != p.value->rows() || p.grad->cols() != p.value->cols())
            throw DimensionError("gradient shape mismatch for parameter " + p.name);
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
            state.v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
        }
    }
    if (state.m.size() != params.size())
        throw DimensionError("optimizer state tracks a different parameter set");

    const auto& h = state.hyper;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1_now = 1.0 - std::pow(h.beta1, t);
    const double bias1_next = 1.0 - std::pow(h.beta1, t + 1.0);
    const double bias2 = 1.0 - std::pow(h.beta2, t);

    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix g = *params[k].grad;
        if (h.clip > 0.0)
            g = g.cwiseMax(-h.clip).cwiseMin(h.clip);
        Matrix& m = state.m[k];
        Matrix& v = state.v[k];
        m = h.beta1 * m + (1.0 - h.beta1) * g;
        v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseAbs2();
        // beta1 = 0 makes bias1_* exactly 1, so neither denominator can vanish.
        const Matrix m_hat = (h.beta1 / bias1_next) * m + ((1.0 - h.beta1) / bias1_now) * g;
        const auto v_hat = v.array() / bias2;
        params[k].value->array() -= h.lr * m_hat.array() / (v_hat.sqrt() + h.eps);
    }
}

} // namespace psfa

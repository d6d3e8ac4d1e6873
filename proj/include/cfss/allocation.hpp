#pragma once

#include "cfss/common.hpp"

namespace cfss {

/// Downlink power coefficients plus the per-AP transmit powers.
///
/// `P_P` and `P_S` are divided by the noise power. `P_S` is the value the
/// SINR formulas use, so callers store the capped secondary power here.
/// NOMA allocations use column a * K + k.
struct PowerAllocation {
    Matrix eta_P;
    Matrix eta_S;
    double P_P = 0.0;
    double P_S = 0.0;
};

/// Per-AP load sum_k delta * eta * rho; the downlink normalisation needs it <= 1.
inline Vector ap_load(const Matrix& delta, const Matrix& eta, const Matrix& rho)
{
    return delta.cwiseProduct(eta).cwiseProduct(rho).rowwise().sum();
}

inline void require_normalised(const Matrix& delta, const Matrix& eta, const Matrix& rho,
                               const char* side)
{
    require(eta.rows() == rho.rows() && eta.cols() == rho.cols(),
            std::string(side) + " allocation has the wrong shape");
    require((eta.array() >= 0.0).all(), std::string(side) + " allocation has negative entries");
    const Vector load = ap_load(delta, eta, rho);
    require((load.array() <= 1.0 + 1e-6).all(),
            std::string(side) + " allocation violates the per-AP power budget");
}

} // namespace cfss

#pragma once

#include "cfss/estimation.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace cfss {

/// Imperfect successive interference cancellation.
/// sigma_e2 holds one entry per user (column a * K + k layout).
struct SicModel {
    Vector sigma_e2_P, sigma_e2_S;

    static double theta_of(double sigma_e2) { return 1.0 / std::sqrt(1.0 + sigma_e2); }
    static double sigma_e2_of(double theta)
    {
        require(theta > 0.0 && theta <= 1.0, "SIC correlation must lie in (0, 1]");
        return 1.0 / (theta * theta) - 1.0;
    }

    /// Same correlation theta for every user of both systems.
    static SicModel uniform(int primary_users, int secondary_users, double theta)
    {
        SicModel s;
        s.sigma_e2_P = Vector::Constant(primary_users, sigma_e2_of(theta));
        s.sigma_e2_S = Vector::Constant(secondary_users, sigma_e2_of(theta));
        return s;
    }
    double theta_P(int p) const { return theta_of(sigma_e2_P(p)); }
    double theta_S(int q) const { return theta_of(sigma_e2_S(q)); }
};

struct RateReport {
    std::string regime;
    Vector gamma_P, gamma_S;
    Vector rate_P, rate_S;
    double sum_primary = 0.0;
    double sum_secondary = 0.0;
};

inline double prelog(int tau_c, int tau_overhead)
{
    require(tau_c > 0 && tau_overhead >= 0, "coherence length must be positive");
    require(tau_overhead < tau_c, "overhead must be shorter than the coherence interval");
    return static_cast<double>(tau_c - tau_overhead) / tau_c;
}

inline Vector rate_from_sinr(const Vector& gamma, int tau_c, int tau_overhead)
{
    const double pl = prelog(tau_c, tau_overhead);
    return gamma.unaryExpr([pl](double g) { return pl * std::log2(1.0 + g); });
}

/// Jensen upper bound on the downlink-pilot rate from the expected SINR.
inline Vector rate_dlpilot_upperbound(const Vector& expected_gamma, int tau_c, int tau_p, int tau_pd)
{
    return rate_from_sinr(expected_gamma, tau_c, tau_p + tau_pd);
}

inline std::pair<double, double> sum_rates(const RateReport& r)
{
    return {r.rate_P.sum(), r.rate_S.sum()};
}

inline RateReport make_report(std::string regime, Vector gP, Vector gS, int tau_c, int overhead)
{
    RateReport r;
    r.regime = std::move(regime);
    r.rate_P = rate_from_sinr(gP, tau_c, overhead);
    r.rate_S = rate_from_sinr(gS, tau_c, overhead);
    r.gamma_P = std::move(gP);
    r.gamma_S = std::move(gS);
    std::tie(r.sum_primary, r.sum_secondary) = sum_rates(r);
    return r;
}

// ---------------------------------------------------------------- OMA

namespace detail {

// Interference power that the other system delivers to each own user:
// sum over other users of E|lambda|^2.
inline Vector oma_cross_power(const Matrix& d_oth, const Matrix& e_oth, const Matrix& rho_oth,
                              const Matrix& zeta_cross, const Matrix& rho_cross, int Q,
                              FormulaVariant variant)
{
    const Matrix w = d_oth.cwiseProduct(e_oth);
    Vector out = zeta_cross.transpose() * w.cwiseProduct(rho_oth).rowwise().sum();
    for (int q = 0; q < Q; ++q) {
        if (variant == FormulaVariant::exact) {
            const double c = w.col(q).cwiseSqrt().dot(rho_cross.col(q));
            out(q) += c * c;
        } else {
            out(q) += w.col(q).dot(rho_cross.col(q).cwiseAbs2());
        }
    }
    return out;
}

inline Vector oma_sinr_side(const Matrix& d_own, const Matrix& e_own, const Matrix& rho_own,
                            const Matrix& zeta_own, double P_own, const Vector& cross_power,
                            double P_oth)
{
    const Matrix w = d_own.cwiseProduct(e_own);
    const Vector mean = (w.cwiseSqrt().cwiseProduct(rho_own)).colwise().sum().transpose();
    const Vector self = zeta_own.transpose() * w.cwiseProduct(rho_own).rowwise().sum();
    Vector g(mean.size());
    for (Eigen::Index k = 0; k < mean.size(); ++k)
        g(k) = P_own * mean(k) * mean(k) / (P_own * self(k) + P_oth * cross_power(k) + 1.0);
    return g;
}

} // namespace detail

/// Average secondary interference power at each PU per unit S-AP power.
inline Vector secondary_cci_Zk(const UlEstimateStats& stats, const LinkGains& gains,
                               const ClusterAssignment& clusters, const Matrix& eta_S,
                               FormulaVariant variant = FormulaVariant::exact)
{
    return detail::oma_cross_power(clusters.delta_S, eta_S, stats.rho_g, gains.zeta_u, stats.rho_u,
                                   stats.Q, variant);
}

/// Primary interference power at each SU per unit P-AP power.
inline Vector primary_cci_at_su(const UlEstimateStats& stats, const LinkGains& gains,
                                const ClusterAssignment& clusters, const Matrix& eta_P,
                                FormulaVariant variant = FormulaVariant::exact)
{
    return detail::oma_cross_power(clusters.delta_P, eta_P, stats.rho_f, gains.zeta_v, stats.rho_v,
                                   stats.Q, variant);
}

/// min(P_S, min_k I_T(k) / Z(k)); a zero Z imposes no limit.
inline double cap_secondary_power(const Vector& Z, const Vector& I_T, double P_S)
{
    require(Z.size() == I_T.size(), "Z and I_T sizes differ");
    double cap = P_S;
    for (Eigen::Index k = 0; k < Z.size(); ++k) {
        require(Z(k) >= 0.0, "Z must be nonnegative");
        if (Z(k) > 0.0) cap = std::min(cap, I_T(k) / Z(k));
    }
    return cap;
}

inline Vector sinr_primary_oma(const UlEstimateStats& stats, const LinkGains& gains,
                               const ClusterAssignment& clusters, const PowerAllocation& alloc,
                               FormulaVariant variant = FormulaVariant::exact)
{
    require_normalised(clusters.delta_P, alloc.eta_P, stats.rho_f, "primary");
    require_normalised(clusters.delta_S, alloc.eta_S, stats.rho_g, "secondary");
    const Vector cross = secondary_cci_Zk(stats, gains, clusters, alloc.eta_S, variant);
    return detail::oma_sinr_side(clusters.delta_P, alloc.eta_P, stats.rho_f, gains.zeta_f, alloc.P_P,
                                 cross, alloc.P_S);
}

inline Vector sinr_secondary_oma(const UlEstimateStats& stats, const LinkGains& gains,
                                 const ClusterAssignment& clusters, const PowerAllocation& alloc,
                                 FormulaVariant variant = FormulaVariant::exact)
{
    require_normalised(clusters.delta_P, alloc.eta_P, stats.rho_f, "primary");
    require_normalised(clusters.delta_S, alloc.eta_S, stats.rho_g, "secondary");
    const Vector cross = primary_cci_at_su(stats, gains, clusters, alloc.eta_P, variant);
    return detail::oma_sinr_side(clusters.delta_S, alloc.eta_S, stats.rho_g, gains.zeta_g, alloc.P_S,
                                 cross, alloc.P_P);
}

/// Expected SINR when each PU decodes with the LMMSE estimate of its
/// effective channel obtained from beamformed downlink pilots.
inline Vector sinr_primary_oma_dlpilot(const DlPilotStatsOma& dl, const UlEstimateStats& stats,
                                       const LinkGains& gains, const ClusterAssignment& clusters,
                                       const PowerAllocation& alloc,
                                       FormulaVariant variant = FormulaVariant::exact)
{
    const Vector cross = secondary_cci_Zk(stats, gains, clusters, alloc.eta_S, variant);
    Vector g(dl.mean_P.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) {
        const double num = dl.mean_P(k) * dl.mean_P(k) + dl.v_Pkk(k) - dl.kappa_P(k);
        const double others = dl.v_Pki.row(k).sum() - dl.v_Pki(k, k);
        g(k) = alloc.P_P * num /
               (alloc.P_P * (others + dl.kappa_P(k)) + alloc.P_S * cross(k) + 1.0);
    }
    return g;
}

inline Vector sinr_secondary_oma_dlpilot(const DlPilotStatsOma& dl, const UlEstimateStats& stats,
                                         const LinkGains& gains, const ClusterAssignment& clusters,
                                         const PowerAllocation& alloc,
                                         FormulaVariant variant = FormulaVariant::exact)
{
    const Vector cross = primary_cci_at_su(stats, gains, clusters, alloc.eta_P, variant);
    Vector g(dl.mean_S.size());
    for (Eigen::Index l = 0; l < g.size(); ++l) {
        const double num = dl.mean_S(l) * dl.mean_S(l) + dl.v_Sll(l) - dl.kappa_S(l);
        const double others = dl.v_Slj.row(l).sum() - dl.v_Slj(l, l);
        g(l) = alloc.P_S * num /
               (alloc.P_S * (others + dl.kappa_S(l)) + alloc.P_P * cross(l) + 1.0);
    }
    return g;
}

// ---------------------------------------------------------------- NOMA

/// Decoding order per cluster: order[a][r] is the slot decoded with rank r,
/// rank 0 being the strongest user.
struct NomaOrdering {
    std::vector<std::vector<int>> primary, secondary;
};

namespace detail {

inline std::vector<std::vector<int>> order_side(const Matrix& alpha, int G, int S)
{
    std::vector<std::vector<int>> out(static_cast<std::size_t>(G));
    const Vector strength = alpha.colwise().sum().transpose();
    for (int a = 0; a < G; ++a) {
        auto& o = out[static_cast<std::size_t>(a)];
        o.resize(static_cast<std::size_t>(S));
        std::iota(o.begin(), o.end(), 0);
        std::stable_sort(o.begin(), o.end(), [&](int x, int y) {
            return strength(a * S + x) > strength(a * S + y);
        });
    }
    return out;
}

inline std::vector<int> ranks_of(const std::vector<int>& order)
{
    std::vector<int> rank(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
    return rank;
}

} // namespace detail

/// Sorts each cluster by sum_m alpha, descending; ties keep slot order.
inline NomaOrdering order_noma_users(const NomaUlStats& s)
{
    return {detail::order_side(s.alpha_f, s.shape.A, s.shape.K),
            detail::order_side(s.alpha_g, s.shape.B, s.shape.L)};
}

struct PowerOrderViolation {
    bool primary = true;
    int cluster = 0;
    int rank_strong = 0; // 1-based ranks, strong user first
    int rank_weak = 0;
    int ap = 0;
    bool operator==(const PowerOrderViolation&) const = default;
};

/// Checks that weaker users never receive less power than stronger ones
/// of the same cluster, AP by AP. Returns every offending adjacent pair.
inline std::vector<PowerOrderViolation> validate_noma_power_ordering(const PowerAllocation& alloc,
                                                                     const NomaOrdering& order)
{
    std::vector<PowerOrderViolation> out;
    auto check = [&](const Matrix& eta, const std::vector<std::vector<int>>& ord, bool primary) {
        for (std::size_t a = 0; a < ord.size(); ++a) {
            const int S = static_cast<int>(ord[a].size());
            for (Eigen::Index m = 0; m < eta.rows(); ++m)
                for (int r = 0; r + 1 < S; ++r) {
                    const double strong = eta(m, static_cast<int>(a) * S + ord[a][static_cast<std::size_t>(r)]);
                    const double weak = eta(m, static_cast<int>(a) * S + ord[a][static_cast<std::size_t>(r + 1)]);
                    if (strong > weak)
                        out.push_back({primary, static_cast<int>(a), r + 1, r + 2, static_cast<int>(m)});
                }
        }
    };
    check(alloc.eta_P, order.primary, true);
    check(alloc.eta_S, order.secondary, false);
    return out;
}

namespace detail {

inline Vector noma_sinr_side(const NomaSide& v, const std::vector<std::vector<int>>& order,
                             const Vector& sigma_e2, double P_own, double P_oth, FormulaVariant variant)
{
    const int U = v.users();
    const Matrix vo = v.var_own();
    const Matrix vx = v.var_cross();
    Vector g(U);
    if (variant == FormulaVariant::as_printed)
        require(v.zeta->rows() == v.zeta_o->rows(),
                "the as-printed NOMA cross term needs equal AP counts in both systems");
    for (int p = 0; p < U; ++p) {
        const int a = v.cluster_of(p), k = p % v.S;
        const auto rank = ranks_of(order[static_cast<std::size_t>(a)]);
        const double th = v.theta(p, k);
        double I1 = 0.0, I2 = 0.0, I3 = 0.0;
        for (int t = 0; t < v.S; ++t) {
            if (t == k) continue;
            const int q = a * v.S + t;
            double m2 = 0.0;
            if (variant == FormulaVariant::exact) {
                const double c = v.theta(p, t);
                m2 = c * c;
            } else {
                for (Eigen::Index m = 0; m < v.zeta->rows(); ++m) {
                    const double r = (*v.alpha)(m, p) * (*v.zeta)(m, q) / (*v.zeta)(m, p);
                    m2 += (*v.eta)(m, q) * r * r;
                }
            }
            if (rank[static_cast<std::size_t>(t)] < rank[static_cast<std::size_t>(k)])
                I1 += m2;
            else
                I2 += 2.0 * (1.0 - SicModel::theta_of(sigma_e2(q))) * m2;
        }
        if (v.paired(a)) {
            for (int j = 0; j < v.S_o; ++j) {
                if (variant == FormulaVariant::exact) {
                    const double c = v.psi(p, j);
                    I3 += c * c;
                } else {
                    const int q = a * v.S_o + j;
                    for (Eigen::Index n = 0; n < v.zeta_o->rows(); ++n) {
                        const double r = (*v.alpha)(n, p) * (*v.zeta_x)(n, p) * (*v.zeta_o)(n, q) /
                                         (*v.zeta)(n, p);
                        I3 += (*v.eta_o)(n, q) * r * r;
                    }
                }
            }
        }
        const double own = vo.row(p).sum();
        const double cross_var = vx.row(p).sum();
        // As printed, the cross-system variance term carries no power factor.
        const double cross_scale = variant == FormulaVariant::exact ? P_oth : 1.0;
        g(p) = P_own * th * th /
               (P_own * (own + I1 + I2) + P_oth * I3 + cross_scale * cross_var + 1.0);
    }
    return g;
}

inline Vector noma_cross_side(const NomaSide& v, FormulaVariant variant)
{
    const int U = v.users();
    const Matrix vx = v.var_cross();
    Vector z(U);
    if (variant == FormulaVariant::as_printed)
        require(v.zeta->rows() == v.zeta_o->rows(),
                "the as-printed NOMA cross term needs equal AP counts in both systems");
    for (int p = 0; p < U; ++p) {
        const int a = v.cluster_of(p);
        double extra = 0.0;
        if (v.paired(a)) {
            for (int j = 0; j < v.S_o; ++j) {
                if (variant == FormulaVariant::exact) {
                    const double c = v.psi(p, j);
                    extra += c * c;
                } else {
                    const int q = a * v.S_o + j;
                    for (Eigen::Index n = 0; n < v.zeta_o->rows(); ++n) {
                        const double r = (*v.alpha)(n, p) * (*v.zeta_x)(n, p) * (*v.zeta_o)(n, q) /
                                         (*v.zeta)(n, p);
                        extra += (*v.eta_o)(n, q) * r * r;
                    }
                }
            }
        }
        z(p) = vx.row(p).sum() + extra;
    }
    return z;
}

} // namespace detail

inline Vector sinr_primary_noma(const NomaUlStats& stats, const LinkGains& gains,
                                const PowerAllocation& alloc, const NomaOrdering& order,
                                const SicModel& sic, FormulaVariant variant = FormulaVariant::exact)
{
    return detail::noma_sinr_side(noma_primary_side(stats, gains, alloc), order.primary, sic.sigma_e2_P,
                                  alloc.P_P, alloc.P_S, variant);
}

inline Vector sinr_secondary_noma(const NomaUlStats& stats, const LinkGains& gains,
                                  const PowerAllocation& alloc, const NomaOrdering& order,
                                  const SicModel& sic, FormulaVariant variant = FormulaVariant::exact)
{
    return detail::noma_sinr_side(noma_secondary_side(stats, gains, alloc), order.secondary,
                                  sic.sigma_e2_S, alloc.P_S, alloc.P_P, variant);
}

/// Average secondary interference power at each NOMA PU per unit S-AP power.
inline Vector secondary_cci_Zak(const NomaUlStats& stats, const LinkGains& gains,
                                const PowerAllocation& alloc,
                                FormulaVariant variant = FormulaVariant::exact)
{
    return detail::noma_cross_side(noma_primary_side(stats, gains, alloc), variant);
}

namespace detail {

inline Vector noma_dl_sinr_side(const NomaDlSide& d, int S, const std::vector<std::vector<int>>& order,
                                double P_own, double P_oth, FormulaVariant variant)
{
    const auto U = d.theta.rows();
    Vector g(U);
    for (Eigen::Index p = 0; p < U; ++p) {
        const int a = static_cast<int>(p) / S, k = static_cast<int>(p) % S;
        const auto rank = ranks_of(order[static_cast<std::size_t>(a)]);
        double intra = 0.0;
        if (variant == FormulaVariant::exact) {
            intra = d.err(p, k);
            for (int t = 0; t < S; ++t) {
                if (t == k) continue;
                intra += rank[static_cast<std::size_t>(t)] < rank[static_cast<std::size_t>(k)]
                             ? d.varrho_mu(p, t)
                             : d.err(p, t);
            }
        } else {
            for (int t = 0; t < S; ++t) {
                intra += d.varrho_mu(p, t) - d.phi_mu(p, t);
                if (rank[static_cast<std::size_t>(t)] > rank[static_cast<std::size_t>(k)])
                    intra += d.phi_mu(p, t);
            }
        }
        g(p) = P_own * d.phi_mu(p, k) /
               (P_own * (d.other_power(p) + intra) + P_oth * d.varrho_lambda.row(p).sum() + 1.0);
    }
    return g;
}

} // namespace detail

/// Expected SINR of every NOMA user under downlink-pilot decoding.
/// Returns {primary, secondary}.
inline std::pair<Vector, Vector> sinr_noma_dlpilot(const DlPilotStatsNoma& dl, const NomaShape& shape,
                                                   const PowerAllocation& alloc, const NomaOrdering& order,
                                                   FormulaVariant variant = FormulaVariant::exact)
{
    return {detail::noma_dl_sinr_side(dl.primary, shape.K, order.primary, alloc.P_P, alloc.P_S, variant),
            detail::noma_dl_sinr_side(dl.secondary, shape.L, order.secondary, alloc.P_S, alloc.P_P,
                                      variant)};
}

} // namespace cfss

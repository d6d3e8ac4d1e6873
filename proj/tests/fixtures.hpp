#pragma once

#include "cfss/cfss.hpp"

namespace fx {

using namespace cfss;

/// Gains with every entry of each matrix set to the given constant.
inline LinkGains constant_gains(int M, int K, int N, int L, double f, double g, double u, double v)
{
    return {Matrix::Constant(M, K, f), Matrix::Constant(N, L, g), Matrix::Constant(N, K, u),
            Matrix::Constant(M, L, v)};
}

/// Small random deployment at a chosen noise level, as used by the
/// Monte-Carlo checks.
struct Desk {
    SystemConfig cfg;
    LinkGains gains;
    UlEstimateStats stats;
    ClusterAssignment clusters;
    PowerAllocation alloc;
    Vector I_T;
};

inline Desk desk_oma(std::uint64_t seed, double noise = 1e-4, int M = 8, int K = 2)
{
    Desk d;
    d.cfg.M = d.cfg.N = M;
    d.cfg.K = d.cfg.L = K;
    d.cfg.noise_power = noise;
    d.cfg.seed = seed;
    d.gains = compute_large_scale(generate_topology(d.cfg), d.cfg);
    d.stats = ul_stats_oma(d.gains, assign_pilots_oma(K, K, K, d.cfg.tau_p), d.cfg.snr(d.cfg.P_ul_pilot));
    d.clusters = full_assignment(d.gains);
    d.I_T = Vector::Ones(K);
    d.alloc = capped_uniform_allocation(d.stats, d.gains, d.clusters, d.cfg.snr(d.cfg.P_P), d.cfg.snr(d.cfg.P_S),
                                        d.I_T);
    return d;
}

inline OmaScenario scenario(const Desk& d)
{
    OmaScenario sc;
    sc.gains = d.gains;
    sc.stats = d.stats;
    sc.clusters = d.clusters;
    sc.alloc = d.alloc;
    sc.Ppd = d.cfg.tau_pd * d.cfg.snr(d.cfg.P_d);
    sc.tau_c = d.cfg.tau_c;
    sc.tau_p = d.cfg.tau_p;
    sc.tau_pd = d.cfg.tau_pd;
    return sc;
}

inline NomaScenario desk_noma(std::uint64_t seed, double theta, double noise = 1e-4, int M = 8, int A = 2,
                              int K = 2)
{
    SystemConfig c;
    c.access = MultipleAccess::noma;
    c.M = c.N = M;
    c.A = c.B = A;
    c.K = c.L = K;
    c.noise_power = noise;
    c.seed = seed;
    NomaScenario sc;
    sc.gains = compute_large_scale(generate_topology(c), c);
    sc.stats = ul_stats_noma(sc.gains, {A, K, A, K}, assign_pilots_noma(A, A, A, c.tau_p), c.snr(c.P_ul_pilot));
    sc.order = order_noma_users(sc.stats);
    sc.alloc = capped_noma_allocation(sc.stats, sc.gains, sc.order, c.snr(c.P_P), c.snr(c.P_S),
                                      Vector::Ones(A * K));
    sc.sic = SicModel::uniform(A * K, A * K, theta);
    sc.Ppd = c.tau_pd * c.snr(c.P_d);
    sc.tau_c = c.tau_c;
    sc.tau_p = c.tau_p;
    sc.tau_pd = c.tau_pd;
    return sc;
}

} // namespace fx

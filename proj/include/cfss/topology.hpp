#pragma once

#include "cfss/common.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace cfss {

enum class MultipleAccess { oma, noma };

/// Physical parameters of one deployment.
///
/// Powers are in watts. Every SINR routine works on powers divided by
/// `noise_power`; use `snr()` for the conversion. In NOMA mode `K` and `L`
/// are users per cluster and `A`, `B` are the cluster counts.
struct SystemConfig {
    int M = 32;
    int N = 32;
    int K = 10;
    int L = 10;
    int A = 1;
    int B = 1;
    MultipleAccess access = MultipleAccess::oma;
    double area_side = 800.0;
    double d0 = 1.0;
    double nu = 2.4;
    double shadow_std_db = 8.0;
    double noise_power = 1.0;
    int tau_c = 196;
    int tau_p = 10;
    int tau_pd = 10;
    double P_ul_pilot = 0.1;
    double P_P = 1.0;
    double P_S = 0.5;
    double P_d = 0.1;
    std::uint64_t seed = 1;

    int num_pu() const { return access == MultipleAccess::noma ? A * K : K; }
    int num_su() const { return access == MultipleAccess::noma ? B * L : L; }
    double snr(double watts) const { return watts / noise_power; }

    void validate() const
    {
        require(M > 0 && N > 0 && K > 0 && L > 0, "AP and user counts must be positive");
        require(A > 0 && B > 0, "cluster counts must be positive");
        require(area_side > 0.0 && d0 > 0.0 && nu > 0.0, "geometry parameters must be positive");
        require(shadow_std_db >= 0.0, "shadow_std_db must be nonnegative");
        require(noise_power > 0.0, "noise_power must be positive");
        require(P_ul_pilot >= 0.0 && P_P >= 0.0 && P_S >= 0.0 && P_d >= 0.0,
                "powers must be nonnegative");
        require(tau_p > 0 && tau_pd >= 0 && tau_c > 0, "symbol counts must be positive");
        require(tau_p + tau_pd < tau_c, "tau_p + tau_pd must be below tau_c");
        if (access == MultipleAccess::oma)
            require(tau_p >= std::max(K, L), "tau_p must be at least max(K, L)");
        else
            require(tau_p >= std::max(A, B), "tau_p must be at least max(A, B)");
    }
};

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

struct NetworkGeometry {
    std::vector<Point> pap_positions;
    std::vector<Point> sap_positions;
    std::vector<Point> pu_positions;
    std::vector<Point> su_positions;
    bool operator==(const NetworkGeometry&) const = default;
};

/// Large-scale gains. Rows index APs, columns index users.
/// f: P-AP to PU, g: S-AP to SU, u: S-AP to PU, v: P-AP to SU.
/// NOMA users are stored in column a * K + k (cluster a, slot k).
struct LinkGains {
    Matrix zeta_f;
    Matrix zeta_g;
    Matrix zeta_u;
    Matrix zeta_v;
};

/// 0/1 masks: delta_P(m, k) is 1 when P-AP m serves PU k.
struct ClusterAssignment {
    Matrix delta_P;
    Matrix delta_S;
};

inline NetworkGeometry generate_topology(const SystemConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> coord(0.0, cfg.area_side);
    auto draw = [&](int n) {
        std::vector<Point> pts(static_cast<std::size_t>(n));
        for (auto& p : pts) {
            p.x = coord(rng);
            p.y = coord(rng);
        }
        return pts;
    };
    NetworkGeometry geo;
    geo.pap_positions = draw(cfg.M);
    geo.sap_positions = draw(cfg.N);
    geo.pu_positions = draw(cfg.num_pu());
    geo.su_positions = draw(cfg.num_su());
    return geo;
}

/// Path loss (d0 / max(d, d0))^nu without shadowing.
inline double path_gain(double distance, double d0, double nu)
{
    return std::pow(d0 / std::max(distance, d0), nu);
}

inline LinkGains compute_large_scale(const NetworkGeometry& geo, const SystemConfig& cfg)
{
    // Shadowing uses its own stream so that moving APs (colocate) keeps
    // the same shadow samples per link.
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(cfg.seed >> 32), 0x5ad0u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> shadow(0.0, 1.0);

    auto fill = [&](const std::vector<Point>& aps, const std::vector<Point>& users) {
        Matrix z(static_cast<Eigen::Index>(aps.size()), static_cast<Eigen::Index>(users.size()));
        for (std::size_t j = 0; j < users.size(); ++j) {
            for (std::size_t i = 0; i < aps.size(); ++i) {
                const double d = std::hypot(aps[i].x - users[j].x, aps[i].y - users[j].y);
                const double phi = cfg.shadow_std_db * shadow(rng);
                z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    path_gain(d, cfg.d0, cfg.nu) * db_to_linear(phi);
            }
        }
        return z;
    };
    LinkGains g;
    g.zeta_f = fill(geo.pap_positions, geo.pu_positions);
    g.zeta_g = fill(geo.sap_positions, geo.su_positions);
    g.zeta_u = fill(geo.sap_positions, geo.pu_positions);
    g.zeta_v = fill(geo.pap_positions, geo.su_positions);
    return g;
}

namespace detail {

inline Matrix top_per_column(const Matrix& gains, int keep)
{
    Matrix mask = Matrix::Zero(gains.rows(), gains.cols());
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(gains.rows()));
    for (Eigen::Index c = 0; c < gains.cols(); ++c) {
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
            return gains(a, c) > gains(b, c);
        });
        for (int r = 0; r < keep; ++r) mask(idx[static_cast<std::size_t>(r)], c) = 1.0;
    }
    return mask;
}

} // namespace detail

/// Each user keeps the `M_P` (resp. `N_S`) APs with the largest gain.
/// Ties go to the lower AP index.
inline ClusterAssignment cluster_aps(const LinkGains& gains, int M_P, int N_S)
{
    require(M_P >= 1 && M_P <= gains.zeta_f.rows(), "M_P must be in [1, M]");
    require(N_S >= 1 && N_S <= gains.zeta_g.rows(), "N_S must be in [1, N]");
    return {detail::top_per_column(gains.zeta_f, M_P), detail::top_per_column(gains.zeta_g, N_S)};
}

inline ClusterAssignment full_assignment(const LinkGains& gains)
{
    return {Matrix::Ones(gains.zeta_f.rows(), gains.zeta_f.cols()),
            Matrix::Ones(gains.zeta_g.rows(), gains.zeta_g.cols())};
}

/// Moves every AP to the centre of the square.
inline NetworkGeometry colocate(const NetworkGeometry& geo, double area_side)
{
    NetworkGeometry out = geo;
    const Point c{area_side / 2.0, area_side / 2.0};
    for (auto& p : out.pap_positions) p = c;
    for (auto& p : out.sap_positions) p = c;
    return out;
}

} // namespace cfss

#pragma once

#include "cfss/allocation.hpp"
#include "cfss/topology.hpp"

#include <vector>

namespace cfss {

/// Pilot indices for the primary and secondary groups.
///
/// A group is a user in OMA and a cluster in NOMA. Groups i < Q of both
/// systems share pilot i; every other group has its own pilot.
struct PilotPlan {
    int Q = 0;
    int tau_p = 0;
    std::vector<int> pu_pilot;
    std::vector<int> su_pilot;

    bool pu_shared(int k) const { return k < Q; }
    bool su_shared(int l) const { return l < Q; }
};

inline PilotPlan assign_pilots(int primary_groups, int secondary_groups, int Q, int tau_p)
{
    require(primary_groups > 0 && secondary_groups > 0, "group counts must be positive");
    require(Q >= 0 && Q <= std::min(primary_groups, secondary_groups),
            "Q must lie in [0, min(primary, secondary)]");
    require(tau_p >= primary_groups + secondary_groups - Q,
            "tau_p too short for the non-shared pilots to stay orthogonal");
    PilotPlan plan;
    plan.Q = Q;
    plan.tau_p = tau_p;
    int next = Q;
    for (int k = 0; k < primary_groups; ++k) plan.pu_pilot.push_back(k < Q ? k : next++);
    for (int l = 0; l < secondary_groups; ++l) plan.su_pilot.push_back(l < Q ? l : next++);
    return plan;
}

inline PilotPlan assign_pilots_oma(int K, int L, int Q, int tau_p) { return assign_pilots(K, L, Q, tau_p); }
inline PilotPlan assign_pilots_noma(int A, int B, int Q, int tau_p) { return assign_pilots(A, B, Q, tau_p); }

/// MMSE statistics for OMA uplink training.
///
/// rho_u(n, k) is E[u_nk conj(g_hat_nk)] for the SU paired with PU k;
/// rho_v(m, l) is E[v_ml conj(f_hat_ml)] for the PU paired with SU l.
/// Both are zero for users whose pilot is not shared.
struct UlEstimateStats {
    Matrix c_P, c_S;
    Matrix rho_f, rho_g;
    Matrix rho_u, rho_v;
    double Pp = 0.0;
    int Q = 0;
};

/// `P_ul_pilot` is the per-symbol pilot power divided by the noise power.
inline UlEstimateStats ul_stats_oma(const LinkGains& gains, const PilotPlan& plan, double P_ul_pilot)
{
    const auto M = gains.zeta_f.rows(), K = gains.zeta_f.cols();
    const auto N = gains.zeta_g.rows(), L = gains.zeta_g.cols();
    require(static_cast<Eigen::Index>(plan.pu_pilot.size()) == K &&
                static_cast<Eigen::Index>(plan.su_pilot.size()) == L,
            "pilot plan does not match the user counts");
    require(P_ul_pilot >= 0.0, "pilot power must be nonnegative");

    UlEstimateStats s;
    s.Pp = plan.tau_p * P_ul_pilot;
    s.Q = plan.Q;
    const double Pp = s.Pp, sq = std::sqrt(Pp);
    s.c_P = Matrix::Zero(M, K);
    s.c_S = Matrix::Zero(N, L);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double sh = plan.pu_shared(static_cast<int>(k)) ? 1.0 : 0.0;
        for (Eigen::Index m = 0; m < M; ++m) {
            const double cross = sh > 0.0 ? gains.zeta_v(m, k) : 0.0;
            s.c_P(m, k) = sq * gains.zeta_f(m, k) / (Pp * (gains.zeta_f(m, k) + cross) + 1.0);
        }
    }
    for (Eigen::Index l = 0; l < L; ++l) {
        const double sh = plan.su_shared(static_cast<int>(l)) ? 1.0 : 0.0;
        for (Eigen::Index n = 0; n < N; ++n) {
            const double cross = sh > 0.0 ? gains.zeta_u(n, l) : 0.0;
            s.c_S(n, l) = sq * gains.zeta_g(n, l) / (Pp * (gains.zeta_g(n, l) + cross) + 1.0);
        }
    }
    s.rho_f = sq * s.c_P.cwiseProduct(gains.zeta_f);
    s.rho_g = sq * s.c_S.cwiseProduct(gains.zeta_g);
    s.rho_u = Matrix::Zero(N, K);
    s.rho_v = Matrix::Zero(M, L);
    for (int q = 0; q < plan.Q; ++q) {
        s.rho_u.col(q) = sq * s.c_S.col(q).cwiseProduct(gains.zeta_u.col(q));
        s.rho_v.col(q) = sq * s.c_P.col(q).cwiseProduct(gains.zeta_v.col(q));
    }
    return s;
}

/// NOMA cluster shape: A primary clusters of K users, B secondary clusters of L.
struct NomaShape {
    int A = 1, K = 1, B = 1, L = 1;
    int pu(int a, int k) const { return a * K + k; }
    int su(int b, int l) const { return b * L + l; }
};

/// MMSE statistics for NOMA uplink training, where a cluster shares one pilot.
///
/// Within a cluster the estimates are proportional:
/// f_hat(m, a, i) = zeta_f(m, a, i) / zeta_f(m, a, k) * f_hat(m, a, k).
/// D_P(m, a) is the normalised power of the pilot signal received at P-AP m.
struct NomaUlStats {
    NomaShape shape;
    Matrix alpha_f, alpha_g;
    Matrix D_P, D_S;
    double Pp = 0.0;
    int Q = 0;

    bool cluster_shared(int a) const { return a < Q; }
};

inline NomaUlStats ul_stats_noma(const LinkGains& gains, const NomaShape& shape, const PilotPlan& plan,
                                 double P_ul_pilot)
{
    const auto M = gains.zeta_f.rows(), N = gains.zeta_g.rows();
    require(gains.zeta_f.cols() == shape.A * shape.K && gains.zeta_g.cols() == shape.B * shape.L,
            "gains do not match the cluster shape");
    require(static_cast<int>(plan.pu_pilot.size()) == shape.A &&
                static_cast<int>(plan.su_pilot.size()) == shape.B,
            "pilot plan does not match the cluster counts");
    NomaUlStats s;
    s.shape = shape;
    s.Pp = plan.tau_p * P_ul_pilot;
    s.Q = plan.Q;
    const double Pp = s.Pp;
    s.D_P = Matrix::Zero(M, shape.A);
    s.D_S = Matrix::Zero(N, shape.B);
    s.alpha_f = Matrix::Zero(M, shape.A * shape.K);
    s.alpha_g = Matrix::Zero(N, shape.B * shape.L);
    for (int a = 0; a < shape.A; ++a) {
        for (Eigen::Index m = 0; m < M; ++m) {
            double sum = 0.0;
            for (int i = 0; i < shape.K; ++i) sum += gains.zeta_f(m, shape.pu(a, i));
            if (s.cluster_shared(a))
                for (int j = 0; j < shape.L; ++j) sum += gains.zeta_v(m, shape.su(a, j));
            s.D_P(m, a) = Pp * sum + 1.0;
            for (int k = 0; k < shape.K; ++k) {
                const double z = gains.zeta_f(m, shape.pu(a, k));
                s.alpha_f(m, shape.pu(a, k)) = Pp * z * z / s.D_P(m, a);
            }
        }
    }
    for (int b = 0; b < shape.B; ++b) {
        for (Eigen::Index n = 0; n < N; ++n) {
            double sum = 0.0;
            for (int j = 0; j < shape.L; ++j) sum += gains.zeta_g(n, shape.su(b, j));
            if (s.cluster_shared(b))
                for (int i = 0; i < shape.K; ++i) sum += gains.zeta_u(n, shape.pu(b, i));
            s.D_S(n, b) = Pp * sum + 1.0;
            for (int l = 0; l < shape.L; ++l) {
                const double z = gains.zeta_g(n, shape.su(b, l));
                s.alpha_g(n, shape.su(b, l)) = Pp * z * z / s.D_S(n, b);
            }
        }
    }
    return s;
}

/// Statistics of the downlink effective channels seen by each OMA user.
///
/// mean_P(k) = E[mu_kk], v_Pkk = Var(mu_kk), u_Pkk = Var(lambda_kk) for the
/// pilot-sharing SU, kappa_P = LMMSE error variance of mu_kk given the
/// beamformed pilot. v_Pki(k, i) = E|mu_ki|^2 for i != k and equals v_Pkk on
/// the diagonal. lambda_mean_P(k) = E[lambda_kk]. Secondary fields mirror these.
struct DlPilotStatsOma {
    Vector mean_P, v_Pkk, u_Pkk, kappa_P, lambda_mean_P;
    Matrix v_Pki;
    Vector mean_S, v_Sll, u_Sll, kappa_S, lambda_mean_S;
    Matrix v_Slj;
    double Ppd = 0.0;
};

/// LMMSE error variance of X given sqrt(Ppd) (X + Y) + noise with
/// Var X = v, Var Y = u and unit noise.
inline double dl_kappa(double v, double u, double Ppd)
{
    return v * (1.0 + Ppd * u) / (Ppd * (v + u) + 1.0);
}

namespace detail {

struct OmaDlSide {
    Vector mean, v, u, kappa, lambda_mean;
    Matrix vki;
};

// own: delta/eta/rho/zeta for the serving system's APs to its users.
// other: delta/eta/rho of the other system plus the cross gains and
// contamination means towards this system's users.
inline OmaDlSide oma_dl_side(const Matrix& d_own, const Matrix& e_own, const Matrix& rho_own,
                             const Matrix& zeta_own, const Matrix& d_oth, const Matrix& e_oth,
                             const Matrix& rho_oth, const Matrix& zeta_cross,
                             const Matrix& rho_cross, int Q, double Ppd)
{
    const auto K = zeta_own.cols();
    OmaDlSide s;
    const Matrix w = d_own.cwiseProduct(e_own);
    const Matrix w_oth = d_oth.cwiseProduct(e_oth);
    s.mean = (w.cwiseSqrt().cwiseProduct(rho_own)).colwise().sum().transpose();
    s.vki = zeta_own.transpose() * w.cwiseProduct(rho_own);
    s.v = s.vki.diagonal();
    s.u = Vector::Zero(K);
    s.lambda_mean = Vector::Zero(K);
    for (int q = 0; q < Q; ++q) {
        s.u(q) = w_oth.col(q).cwiseProduct(rho_oth.col(q)).dot(zeta_cross.col(q));
        s.lambda_mean(q) = w_oth.col(q).cwiseSqrt().dot(rho_cross.col(q));
    }
    s.kappa.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) s.kappa(k) = dl_kappa(s.v(k), s.u(k), Ppd);
    return s;
}

} // namespace detail

/// `Ppd` is tau_pd * P_d divided by the noise power.
inline DlPilotStatsOma dl_stats_oma(const UlEstimateStats& stats, const LinkGains& gains,
                                    const ClusterAssignment& clusters, const PowerAllocation& alloc,
                                    double Ppd)
{
    require(Ppd >= 0.0, "downlink pilot power must be nonnegative");
    const auto P = detail::oma_dl_side(clusters.delta_P, alloc.eta_P, stats.rho_f, gains.zeta_f,
                                       clusters.delta_S, alloc.eta_S, stats.rho_g, gains.zeta_u,
                                       stats.rho_u, stats.Q, Ppd);
    const auto S = detail::oma_dl_side(clusters.delta_S, alloc.eta_S, stats.rho_g, gains.zeta_g,
                                       clusters.delta_P, alloc.eta_P, stats.rho_f, gains.zeta_v,
                                       stats.rho_v, stats.Q, Ppd);
    DlPilotStatsOma d;
    d.Ppd = Ppd;
    d.mean_P = P.mean;
    d.v_Pkk = P.v;
    d.u_Pkk = P.u;
    d.kappa_P = P.kappa;
    d.lambda_mean_P = P.lambda_mean;
    d.v_Pki = P.vki;
    d.mean_S = S.mean;
    d.v_Sll = S.v;
    d.u_Sll = S.u;
    d.kappa_S = S.kappa;
    d.lambda_mean_S = S.lambda_mean;
    d.v_Slj = S.vki;
    return d;
}

/// One system of a NOMA deployment seen from its own users.
///
/// "own" refers to the system whose users are described, "other" to the
/// system that shares the band. zeta_x holds the gains from the other
/// system's APs to the own users.
struct NomaSide {
    const Matrix* alpha = nullptr;
    const Matrix* zeta = nullptr;
    const Matrix* D = nullptr;
    const Matrix* eta = nullptr;
    int G = 0, S = 0;
    const Matrix* alpha_o = nullptr;
    const Matrix* zeta_o = nullptr;
    const Matrix* D_o = nullptr;
    const Matrix* eta_o = nullptr;
    int G_o = 0, S_o = 0;
    const Matrix* zeta_x = nullptr;
    double Pp = 0.0;
    int Q = 0;

    int users() const { return G * S; }
    int cluster_of(int p) const { return p / S; }
    bool paired(int a) const { return a < Q && a < G_o; }

    /// E[X * conj(f_hat)] for own user p against own user q of the same cluster,
    /// observed at AP m.
    double cross_mean(Eigen::Index m, int p, int q) const
    {
        const int a = cluster_of(p);
        return Pp * (*zeta)(m, p) * (*zeta)(m, q) / (*D)(m, a);
    }

    /// E[x * conj(g_hat)] for own user p and user q of the paired other cluster.
    double cross_mean_other(Eigen::Index n, int p, int q) const
    {
        const int a = cluster_of(p);
        return Pp * (*zeta_x)(n, p) * (*zeta_o)(n, q) / (*D_o)(n, a);
    }

    /// theta(p, t) = E[mu_{p, t}] for cluster member t of p's cluster.
    double theta(int p, int t) const
    {
        const int q = cluster_of(p) * S + t;
        double s = 0.0;
        for (Eigen::Index m = 0; m < zeta->rows(); ++m)
            s += std::sqrt((*eta)(m, q)) * cross_mean(m, p, q);
        return s;
    }

    /// psi(p, j) = E[lambda_{p, j}] for member j of the paired other cluster.
    double psi(int p, int j) const
    {
        const int a = cluster_of(p);
        if (!paired(a)) return 0.0;
        const int q = a * S_o + j;
        double s = 0.0;
        for (Eigen::Index n = 0; n < zeta_o->rows(); ++n)
            s += std::sqrt((*eta_o)(n, q)) * cross_mean_other(n, p, q);
        return s;
    }

    /// var_own()(p, q) = Var(mu_{p, q}) = sum_m eta alpha_q zeta_p, any own user q.
    Matrix var_own() const { return zeta->transpose() * eta->cwiseProduct(*alpha); }

    /// var_cross()(p, q) = Var(lambda_{p, q}), any other-system user q.
    Matrix var_cross() const { return zeta_x->transpose() * eta_o->cwiseProduct(*alpha_o); }
};

inline NomaSide noma_primary_side(const NomaUlStats& s, const LinkGains& g, const PowerAllocation& alloc)
{
    NomaSide v;
    v.alpha = &s.alpha_f;
    v.zeta = &g.zeta_f;
    v.D = &s.D_P;
    v.eta = &alloc.eta_P;
    v.G = s.shape.A;
    v.S = s.shape.K;
    v.alpha_o = &s.alpha_g;
    v.zeta_o = &g.zeta_g;
    v.D_o = &s.D_S;
    v.eta_o = &alloc.eta_S;
    v.G_o = s.shape.B;
    v.S_o = s.shape.L;
    v.zeta_x = &g.zeta_u;
    v.Pp = s.Pp;
    v.Q = s.Q;
    return v;
}

inline NomaSide noma_secondary_side(const NomaUlStats& s, const LinkGains& g, const PowerAllocation& alloc)
{
    NomaSide v;
    v.alpha = &s.alpha_g;
    v.zeta = &g.zeta_g;
    v.D = &s.D_S;
    v.eta = &alloc.eta_S;
    v.G = s.shape.B;
    v.S = s.shape.L;
    v.alpha_o = &s.alpha_f;
    v.zeta_o = &g.zeta_f;
    v.D_o = &s.D_P;
    v.eta_o = &alloc.eta_P;
    v.G_o = s.shape.A;
    v.S_o = s.shape.K;
    v.zeta_x = &g.zeta_v;
    v.Pp = s.Pp;
    v.Q = s.Q;
    return v;
}

/// Downlink-pilot statistics for the users of one NOMA system.
///
/// Rows index own users p. Columns of the S-wide tables index the members t
/// of p's cluster: theta = E[mu], varrho_mu = E|mu|^2, omega = LMMSE gain,
/// phi_mu = E|mu_hat|^2, err = E|mu - mu_hat|^2. psi holds E[lambda] for the
/// paired other cluster. varrho_lambda(p, q) = E|lambda_{p,q}|^2 for every
/// other-system user q. other_power(p) sums E|mu|^2 over foreign clusters.
struct NomaDlSide {
    Matrix theta, psi, omega, varrho_mu, phi_mu, err, varrho_lambda;
    Vector other_power;
};

struct DlPilotStatsNoma {
    NomaDlSide primary, secondary;
    double Ppd = 0.0;
};

namespace detail {

inline NomaDlSide noma_dl_side_exact(const NomaSide& v, double Ppd)
{
    const int U = v.users(), S = v.S;
    const Eigen::Index Mo = v.zeta->rows(), No = v.zeta_o->rows();
    NomaDlSide d;
    d.theta = Matrix::Zero(U, S);
    d.psi = Matrix::Zero(U, v.S_o);
    d.omega = Matrix::Zero(U, S);
    d.varrho_mu = Matrix::Zero(U, S);
    d.phi_mu = Matrix::Zero(U, S);
    d.err = Matrix::Zero(U, S);
    d.other_power = Vector::Zero(U);
    const Matrix vo = v.var_own();
    const Matrix vx = v.var_cross();
    d.varrho_lambda = vx;
    const double sq = std::sqrt(v.Pp);
    for (int p = 0; p < U; ++p) {
        const int a = v.cluster_of(p);
        // Sum over the cluster of mu is sum_m W_m f_p conj(y_m) with
        // Var(f_p conj(y_m)) = zeta_p D_m; same structure for lambda.
        Vector W = Vector::Zero(Mo);
        for (Eigen::Index m = 0; m < Mo; ++m)
            for (int t = 0; t < S; ++t) {
                const int q = a * S + t;
                W(m) += std::sqrt((*v.eta)(m, q)) * sq * (*v.zeta)(m, q) / (*v.D)(m, a);
            }
        double var_y = 0.0;
        for (Eigen::Index m = 0; m < Mo; ++m) var_y += W(m) * W(m) * (*v.zeta)(m, p) * (*v.D)(m, a);
        if (v.paired(a)) {
            for (Eigen::Index n = 0; n < No; ++n) {
                double Vn = 0.0;
                for (int j = 0; j < v.S_o; ++j) {
                    const int q = a * v.S_o + j;
                    Vn += std::sqrt((*v.eta_o)(n, q)) * sq * (*v.zeta_o)(n, q) / (*v.D_o)(n, a);
                }
                var_y += Vn * Vn * (*v.zeta_x)(n, p) * (*v.D_o)(n, a);
            }
            for (int j = 0; j < v.S_o; ++j) {
                d.psi(p, j) = v.psi(p, j);
                d.varrho_lambda(p, a * v.S_o + j) += d.psi(p, j) * d.psi(p, j);
            }
        }
        var_y = Ppd * var_y + 1.0;
        for (int t = 0; t < S; ++t) {
            const int q = a * S + t;
            double cov = 0.0;
            for (Eigen::Index m = 0; m < Mo; ++m)
                cov += std::sqrt((*v.eta)(m, q)) * sq * (*v.zeta)(m, q) / (*v.D)(m, a) * W(m) *
                       (*v.zeta)(m, p) * (*v.D)(m, a);
            cov *= std::sqrt(Ppd);
            const double th = v.theta(p, t);
            d.theta(p, t) = th;
            d.varrho_mu(p, t) = vo(p, q) + th * th;
            d.omega(p, t) = cov / var_y;
            d.phi_mu(p, t) = th * th + cov * cov / var_y;
            d.err(p, t) = std::max(0.0, vo(p, q) - cov * cov / var_y);
        }
        for (int q = 0; q < U; ++q)
            if (v.cluster_of(q) != a) d.other_power(p) += vo(p, q);
    }
    return d;
}

inline NomaDlSide noma_dl_side_printed(const NomaSide& v, double Ppd, bool lambda_contamination)
{
    const int U = v.users(), S = v.S;
    NomaDlSide d;
    d.theta = Matrix::Zero(U, S);
    d.psi = Matrix::Zero(U, v.S_o);
    d.omega = Matrix::Zero(U, S);
    d.varrho_mu = Matrix::Zero(U, S);
    d.phi_mu = Matrix::Zero(U, S);
    d.err = Matrix::Zero(U, S);
    d.other_power = Vector::Zero(U);
    const Matrix vo = v.var_own();
    d.varrho_lambda = v.var_cross();
    for (int p = 0; p < U; ++p) {
        const int a = v.cluster_of(p);
        for (int t = 0; t < S; ++t) {
            const int q = a * S + t;
            double s = 0.0;
            for (Eigen::Index m = 0; m < v.zeta->rows(); ++m)
                s += (*v.eta)(m, q) * (*v.alpha)(m, q) * ((*v.zeta)(m, p) + (*v.alpha)(m, p));
            d.varrho_mu(p, t) = s;
            d.theta(p, t) = v.theta(p, t);
        }
        if (v.paired(a)) {
            for (int j = 0; j < v.S_o; ++j) {
                const int q = a * v.S_o + j;
                d.psi(p, j) = v.psi(p, j);
                if (lambda_contamination) {
                    double c = 0.0;
                    for (Eigen::Index n = 0; n < v.zeta_o->rows(); ++n) {
                        const double r = (*v.alpha_o)(n, q) * (*v.zeta_x)(n, p) / (*v.zeta_o)(n, q);
                        c += (*v.eta_o)(n, q) * r * r;
                    }
                    d.varrho_lambda(p, q) += c;
                }
            }
        }
        double spread = 0.0, total = 0.0, mean = 0.0;
        for (int t = 0; t < S; ++t) {
            spread += std::max(0.0, d.varrho_mu(p, t) - d.theta(p, t) * d.theta(p, t));
            total += d.varrho_mu(p, t);
            mean += d.theta(p, t);
        }
        for (int j = 0; j < v.S_o; ++j) {
            const int q = a * v.S_o + j;
            if (v.paired(a)) {
                spread += std::max(0.0, d.varrho_lambda(p, q) - d.psi(p, j) * d.psi(p, j));
                total += d.varrho_lambda(p, q);
                mean += d.psi(p, j);
            }
        }
        const double denom = Ppd * spread + 1.0;
        // The printed variance of the received pilot can drop below the
        // noise floor because the diagonal terms ignore cross-AP means.
        const double var_y = std::max(1.0, Ppd * total + 1.0 - Ppd * mean * mean);
        for (int t = 0; t < S; ++t) {
            const double th = d.theta(p, t);
            d.omega(p, t) = std::sqrt(Ppd) * std::max(0.0, d.varrho_mu(p, t) - th * th) / denom;
            d.phi_mu(p, t) = th * th + d.omega(p, t) * d.omega(p, t) * var_y;
            d.err(p, t) = std::max(0.0, d.varrho_mu(p, t) - d.phi_mu(p, t));
        }
        for (int q = 0; q < U; ++q)
            if (v.cluster_of(q) != a) d.other_power(p) += vo(p, q);
    }
    return d;
}

} // namespace detail

/// `Ppd` is tau_pd * P_d divided by the noise power. `lambda_contamination`
/// only affects the as-printed variant; the exact variant always includes
/// the pilot-sharing mean in E|lambda|^2.
inline DlPilotStatsNoma dl_stats_noma(const NomaUlStats& stats, const LinkGains& gains,
                                      const PowerAllocation& alloc, double Ppd,
                                      FormulaVariant variant = FormulaVariant::exact,
                                      bool lambda_contamination = false)
{
    require(Ppd >= 0.0, "downlink pilot power must be nonnegative");
    const NomaSide P = noma_primary_side(stats, gains, alloc);
    const NomaSide S = noma_secondary_side(stats, gains, alloc);
    DlPilotStatsNoma d;
    d.Ppd = Ppd;
    if (variant == FormulaVariant::exact) {
        d.primary = detail::noma_dl_side_exact(P, Ppd);
        d.secondary = detail::noma_dl_side_exact(S, Ppd);
    } else {
        d.primary = detail::noma_dl_side_printed(P, Ppd, lambda_contamination);
        d.secondary = detail::noma_dl_side_printed(S, Ppd, lambda_contamination);
    }
    return d;
}

} // namespace cfss

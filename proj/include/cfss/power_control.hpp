#pragma once

#include "cfss/rates.hpp"
#include "cfss/soc_barrier.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace cfss {

/// Equal share per AP, scaled so the AP uses its whole budget.
/// APs that serve nobody get a zero row.
inline Matrix uniform_eta(const Matrix& delta, const Matrix& rho)
{
    Matrix eta = Matrix::Zero(rho.rows(), rho.cols());
    const Vector load = delta.cwiseProduct(rho).rowwise().sum();
    for (Eigen::Index m = 0; m < rho.rows(); ++m)
        if (load(m) > 0.0) eta.row(m) = delta.row(m) / load(m);
    return eta;
}

inline PowerAllocation uniform_allocation(const UlEstimateStats& stats, const ClusterAssignment& clusters,
                                          double P_P, double P_S)
{
    return {uniform_eta(clusters.delta_P, stats.rho_f), uniform_eta(clusters.delta_S, stats.rho_g), P_P,
            P_S};
}

/// Uniform allocation with P_S replaced by the interference-threshold cap.
inline PowerAllocation capped_uniform_allocation(const UlEstimateStats& stats, const LinkGains& gains,
                                                 const ClusterAssignment& clusters, double P_P, double P_S,
                                                 const Vector& I_T,
                                                 FormulaVariant variant = FormulaVariant::exact)
{
    PowerAllocation a = uniform_allocation(stats, clusters, P_P, P_S);
    a.P_S = cap_secondary_power(secondary_cci_Zk(stats, gains, clusters, a.eta_S, variant), I_T, P_S);
    return a;
}

/// Fixed NOMA allocation: at each AP the user decoded with rank r gets
/// weight r + 1, and the AP budget sum eta * alpha = 1 is met with equality.
inline Matrix noma_ordered_eta(const Matrix& alpha, const std::vector<std::vector<int>>& order)
{
    const int S = order.empty() ? 0 : static_cast<int>(order.front().size());
    Matrix w = Matrix::Zero(alpha.rows(), alpha.cols());
    for (std::size_t a = 0; a < order.size(); ++a)
        for (int r = 0; r < S; ++r)
            w.col(static_cast<int>(a) * S + order[a][static_cast<std::size_t>(r)]).setConstant(r + 1.0);
    Matrix eta = Matrix::Zero(alpha.rows(), alpha.cols());
    const Vector load = w.cwiseProduct(alpha).rowwise().sum();
    for (Eigen::Index m = 0; m < alpha.rows(); ++m)
        if (load(m) > 0.0) eta.row(m) = w.row(m) / load(m);
    return eta;
}

inline PowerAllocation noma_ordered_allocation(const NomaUlStats& stats, const NomaOrdering& order,
                                               double P_P, double P_S)
{
    return {noma_ordered_eta(stats.alpha_f, order.primary), noma_ordered_eta(stats.alpha_g, order.secondary),
            P_P, P_S};
}

/// NOMA allocation with P_S capped by the per-PU interference thresholds.
inline PowerAllocation capped_noma_allocation(const NomaUlStats& stats, const LinkGains& gains,
                                              const NomaOrdering& order, double P_P, double P_S,
                                              const Vector& I_T,
                                              FormulaVariant variant = FormulaVariant::exact)
{
    PowerAllocation a = noma_ordered_allocation(stats, order, P_P, P_S);
    a.P_S = cap_secondary_power(secondary_cci_Zak(stats, gains, a, variant), I_T, P_S);
    return a;
}

/// Max-min power control instance. Powers are noise-normalised.
/// The per-system weights do not change the optimum of the common-SINR
/// problem and are kept only for reporting.
struct MaxMinProblem {
    UlEstimateStats stats;
    LinkGains gains;
    ClusterAssignment clusters;
    double P_P = 0.0;
    double P_S = 0.0;
    Vector I_T;
    double epsilon = 1e-3;
    std::optional<std::pair<double, double>> lambda_bounds;
    double w_P = 1.0, w_S = 1.0;
};

enum class FeasibilityStatus { feasible, infeasible, solver_failure };

struct FeasibilityResult {
    FeasibilityStatus status = FeasibilityStatus::solver_failure;
    bool feasible = false;
    Matrix beta_P, beta_S;
    double max_violation = 0.0;
    int newton_steps = 0;
};

/// One evaluated cone: the constraint reads norm(v) <= t.
struct SocVector {
    Vector v;
    double t = 0.0;
};

namespace detail {

// Maps beta entries with delta = 1 and rho > 0 onto scaled variables
// x = beta * sqrt(rho), so the per-AP budgets become sum x^2 <= 1.
struct VarMap {
    std::vector<int> idx_P, idx_S; // -1 when the entry is fixed at zero
    std::vector<Eigen::Index> row, col;
    std::vector<bool> primary;
    Eigen::Index M = 0, K = 0, N = 0, L = 0;
    int n = 0;

    int P(Eigen::Index m, Eigen::Index k) const { return idx_P[static_cast<std::size_t>(m * K + k)]; }
    int S(Eigen::Index n_, Eigen::Index l) const { return idx_S[static_cast<std::size_t>(n_ * L + l)]; }
};

inline VarMap make_varmap(const MaxMinProblem& pr)
{
    VarMap vm;
    vm.M = pr.stats.rho_f.rows();
    vm.K = pr.stats.rho_f.cols();
    vm.N = pr.stats.rho_g.rows();
    vm.L = pr.stats.rho_g.cols();
    vm.idx_P.assign(static_cast<std::size_t>(vm.M * vm.K), -1);
    vm.idx_S.assign(static_cast<std::size_t>(vm.N * vm.L), -1);
    for (Eigen::Index m = 0; m < vm.M; ++m)
        for (Eigen::Index k = 0; k < vm.K; ++k)
            if (pr.clusters.delta_P(m, k) > 0.0 && pr.stats.rho_f(m, k) > 0.0) {
                vm.idx_P[static_cast<std::size_t>(m * vm.K + k)] = vm.n++;
                vm.row.push_back(m);
                vm.col.push_back(k);
                vm.primary.push_back(true);
            }
    for (Eigen::Index n = 0; n < vm.N; ++n)
        for (Eigen::Index l = 0; l < vm.L; ++l)
            if (pr.clusters.delta_S(n, l) > 0.0 && pr.stats.rho_g(n, l) > 0.0) {
                vm.idx_S[static_cast<std::size_t>(n * vm.L + l)] = vm.n++;
                vm.row.push_back(n);
                vm.col.push_back(l);
                vm.primary.push_back(false);
            }
    return vm;
}

// Interference quadratic form seen by PU k (or SU l when primary == false)
// per unit power of each system, with the coherent pilot-sharing term.
inline soc::QuadForm interference_form(const MaxMinProblem& pr, const VarMap& vm, Eigen::Index k,
                                       bool primary, double P_own, double P_oth)
{
    const auto& s = pr.stats;
    const auto& g = pr.gains;
    soc::QuadForm q;
    for (int j = 0; j < vm.n; ++j) {
        const auto r = vm.row[static_cast<std::size_t>(j)];
        const bool own = vm.primary[static_cast<std::size_t>(j)] == primary;
        double zeta;
        if (primary)
            zeta = own ? g.zeta_f(r, k) : g.zeta_u(r, k);
        else
            zeta = own ? g.zeta_g(r, k) : g.zeta_v(r, k);
        const double w = (own ? P_own : P_oth) * zeta;
        if (w > 0.0) q.diag.emplace_back(j, w);
    }
    if (k < s.Q) {
        const double sq = std::sqrt(P_oth);
        if (primary) {
            for (Eigen::Index n = 0; n < vm.N; ++n) {
                const int j = vm.S(n, k);
                if (j >= 0 && s.rho_u(n, k) > 0.0)
                    q.coherent.terms.emplace_back(j, sq * s.rho_u(n, k) / std::sqrt(s.rho_g(n, k)));
            }
        } else {
            for (Eigen::Index m = 0; m < vm.M; ++m) {
                const int j = vm.P(m, k);
                if (j >= 0 && s.rho_v(m, k) > 0.0)
                    q.coherent.terms.emplace_back(j, sq * s.rho_v(m, k) / std::sqrt(s.rho_f(m, k)));
            }
        }
    }
    return q;
}

inline soc::Problem build_problem(const MaxMinProblem& pr, const VarMap& vm, double lambda)
{
    soc::Problem p;
    p.n = vm.n;
    const auto& s = pr.stats;
    for (Eigen::Index k = 0; k < vm.K; ++k) {
        soc::Cone c;
        c.q = interference_form(pr, vm, k, true, pr.P_P, pr.P_S);
        const double sc = std::sqrt(pr.P_P / lambda);
        for (Eigen::Index m = 0; m < vm.M; ++m)
            if (const int j = vm.P(m, k); j >= 0) c.a.terms.emplace_back(j, sc * std::sqrt(s.rho_f(m, k)));
        p.cones.push_back(std::move(c));
    }
    for (Eigen::Index l = 0; l < vm.L; ++l) {
        soc::Cone c;
        c.q = interference_form(pr, vm, l, false, pr.P_S, pr.P_P);
        const double sc = std::sqrt(pr.P_S / lambda);
        for (Eigen::Index n = 0; n < vm.N; ++n)
            if (const int j = vm.S(n, l); j >= 0) c.a.terms.emplace_back(j, sc * std::sqrt(s.rho_g(n, l)));
        p.cones.push_back(std::move(c));
    }
    for (Eigen::Index m = 0; m < vm.M; ++m) {
        soc::QuadForm b;
        for (Eigen::Index k = 0; k < vm.K; ++k)
            if (const int j = vm.P(m, k); j >= 0) b.diag.emplace_back(j, 1.0);
        if (!b.diag.empty()) p.budgets.push_back(std::move(b));
    }
    for (Eigen::Index n = 0; n < vm.N; ++n) {
        soc::QuadForm b;
        for (Eigen::Index l = 0; l < vm.L; ++l)
            if (const int j = vm.S(n, l); j >= 0) b.diag.emplace_back(j, 1.0);
        if (!b.diag.empty()) p.budgets.push_back(std::move(b));
    }
    // Interference threshold at each PU: P_S * Z_k(beta) <= I_T(k).
    for (Eigen::Index k = 0; k < vm.K; ++k) {
        if (!(pr.I_T(k) < std::numeric_limits<double>::infinity())) continue;
        soc::QuadForm q = interference_form(pr, vm, k, true, 0.0, pr.P_S);
        for (auto& [j, w] : q.diag) w /= pr.I_T(k);
        for (auto& [j, c] : q.coherent.terms) c /= std::sqrt(pr.I_T(k));
        if (!q.diag.empty()) p.budgets.push_back(std::move(q));
    }
    return p;
}

inline Vector to_x(const MaxMinProblem& pr, const VarMap& vm, const Matrix& beta_P, const Matrix& beta_S)
{
    Vector x(vm.n);
    for (int j = 0; j < vm.n; ++j) {
        const auto r = vm.row[static_cast<std::size_t>(j)], c = vm.col[static_cast<std::size_t>(j)];
        x(j) = vm.primary[static_cast<std::size_t>(j)] ? beta_P(r, c) * std::sqrt(pr.stats.rho_f(r, c))
                                                       : beta_S(r, c) * std::sqrt(pr.stats.rho_g(r, c));
    }
    return x;
}

inline std::pair<Matrix, Matrix> to_beta(const MaxMinProblem& pr, const VarMap& vm, const Vector& x)
{
    Matrix bP = Matrix::Zero(vm.M, vm.K), bS = Matrix::Zero(vm.N, vm.L);
    for (int j = 0; j < vm.n; ++j) {
        const auto r = vm.row[static_cast<std::size_t>(j)], c = vm.col[static_cast<std::size_t>(j)];
        const double xj = std::max(0.0, x(j));
        if (vm.primary[static_cast<std::size_t>(j)])
            bP(r, c) = xj / std::sqrt(pr.stats.rho_f(r, c));
        else
            bS(r, c) = xj / std::sqrt(pr.stats.rho_g(r, c));
    }
    return {bP, bS};
}

// Strictly interior starting point: equal split of each AP budget, then
// the secondary part shrunk until every threshold holds with margin.
inline Vector interior_start(const soc::Problem& p, const VarMap& vm)
{
    Vector x = Vector::Zero(vm.n);
    std::vector<int> cnt_P(static_cast<std::size_t>(vm.M), 0), cnt_S(static_cast<std::size_t>(vm.N), 0);
    for (int j = 0; j < vm.n; ++j)
        (vm.primary[static_cast<std::size_t>(j)] ? cnt_P : cnt_S)[static_cast<std::size_t>(vm.row[static_cast<std::size_t>(j)])]++;
    for (int j = 0; j < vm.n; ++j) {
        const auto r = static_cast<std::size_t>(vm.row[static_cast<std::size_t>(j)]);
        const int c = vm.primary[static_cast<std::size_t>(j)] ? cnt_P[r] : cnt_S[r];
        x(j) = 0.5 / std::sqrt(static_cast<double>(c));
    }
    double worst = 0.0;
    for (const auto& b : p.budgets) worst = std::max(worst, b.eval(x));
    if (worst > 0.5) x *= std::sqrt(0.5 / worst);
    return x;
}

inline Vector shrink_into_budgets(const soc::Problem& p, Vector x)
{
    for (int j = 0; j < x.size(); ++j) x(j) = std::max(x(j), 1e-12);
    double worst = 0.0;
    for (const auto& b : p.budgets) worst = std::max(worst, b.eval(x));
    if (worst > 0.81) x *= std::sqrt(0.81 / worst);
    return x;
}

} // namespace detail

/// Evaluates every SINR cone at beta for the given lambda.
/// Primary users come first, then secondary users.
inline std::vector<SocVector> build_soc_vectors(const MaxMinProblem& pr, const Matrix& beta_P,
                                                const Matrix& beta_S, double lambda)
{
    require(lambda > 0.0, "lambda must be positive");
    const auto vm = detail::make_varmap(pr);
    const auto p = detail::build_problem(pr, vm, lambda);
    const Vector x = detail::to_x(pr, vm, beta_P, beta_S);
    std::vector<SocVector> out;
    for (const auto& c : p.cones) {
        SocVector sv;
        sv.v.resize(static_cast<Eigen::Index>(c.q.diag.size()) + 2);
        Eigen::Index i = 0;
        for (const auto& [j, w] : c.q.diag) sv.v(i++) = std::sqrt(w) * x(j);
        sv.v(i++) = c.q.coherent.eval(x);
        sv.v(i) = 1.0;
        sv.t = c.a.eval(x);
        out.push_back(std::move(sv));
    }
    return out;
}

/// Decides whether every user can reach SINR lambda under the per-AP
/// budgets and the interference thresholds. Violations are measured in
/// units of the noise amplitude.
inline FeasibilityResult feasibility_check(const MaxMinProblem& pr, double lambda,
                                           const std::optional<std::pair<Matrix, Matrix>>& warm = std::nullopt,
                                           double tolerance = 1e-6)
{
    require(lambda > 0.0, "lambda must be positive");
    const auto vm = detail::make_varmap(pr);
    const auto p = detail::build_problem(pr, vm, lambda);
    FeasibilityResult fr;
    if (vm.n == 0) {
        fr.status = FeasibilityStatus::infeasible;
        fr.beta_P = Matrix::Zero(vm.M, vm.K);
        fr.beta_S = Matrix::Zero(vm.N, vm.L);
        fr.max_violation = soc::max_cone_violation(p, Vector::Zero(0));
        return fr;
    }
    Vector x0 = warm ? detail::shrink_into_budgets(p, detail::to_x(pr, vm, warm->first, warm->second))
                     : detail::interior_start(p, vm);
    soc::Options opt;
    opt.tolerance = tolerance;
    const auto r = soc::solve(p, x0, opt);
    fr.newton_steps = r.newton_steps;
    std::tie(fr.beta_P, fr.beta_S) = detail::to_beta(pr, vm, r.x);
    fr.max_violation = std::max(0.0, soc::max_cone_violation(p, r.x));
    switch (r.status) {
    case soc::Status::feasible:
        fr.status = FeasibilityStatus::feasible;
        fr.feasible = true;
        break;
    case soc::Status::infeasible:
        fr.status = FeasibilityStatus::infeasible;
        break;
    case soc::Status::failed:
        fr.status = FeasibilityStatus::solver_failure;
        break;
    }
    return fr;
}

class SolverFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BisectionStep {
    double lambda = 0.0;
    bool feasible = false;
};

struct MaxMinResult {
    PowerAllocation alloc;
    double lambda_star = 0.0;
    double lambda_lo = 0.0, lambda_hi = 0.0;
    double initial_span = 0.0;
    int iterations = 0;
    int expansions = 0;
    std::vector<BisectionStep> trajectory;
    Matrix beta_P, beta_S;
};

/// Per-user SINRs (primary then secondary) for scaled beta, using the
/// uncapped P_S of the problem.
inline Vector maxmin_sinrs(const MaxMinProblem& pr, const Matrix& beta_P, const Matrix& beta_S)
{
    PowerAllocation a{beta_P.cwiseAbs2(), beta_S.cwiseAbs2(), pr.P_P, pr.P_S};
    const Vector gP = sinr_primary_oma(pr.stats, pr.gains, pr.clusters, a);
    const Vector gS = sinr_secondary_oma(pr.stats, pr.gains, pr.clusters, a);
    Vector g(gP.size() + gS.size());
    g << gP, gS;
    return g;
}

namespace detail {

// Lowers the columns of over-served users until every SINR sits at the
// target. Interference only falls when a column shrinks, so each pass keeps
// every user at or above the target and the budgets stay satisfied.
inline std::pair<Matrix, Matrix> equalise(const MaxMinProblem& pr, Matrix bP, Matrix bS, double target)
{
    if (!(target > 0.0)) return {bP, bS};
    const auto K = bP.cols(), L = bS.cols();
    const Matrix& d_P = pr.clusters.delta_P;
    const Matrix& d_S = pr.clusters.delta_S;
    for (int it = 0; it < 2000; ++it) {
        const Matrix eP = bP.cwiseAbs2(), eS = bS.cwiseAbs2();
        const Vector zk = secondary_cci_Zk(pr.stats, pr.gains, pr.clusters, eS);
        const Vector zl = primary_cci_at_su(pr.stats, pr.gains, pr.clusters, eP);
        double worst = 0.0;
        Vector scale_P = Vector::Ones(K), scale_S = Vector::Ones(L);
        auto solve_scale = [&](double mean, double own, double rest, double P) {
            // gamma(c) = c^2 P mean^2 / (c^2 P own + rest); solve gamma = target.
            const double A = P * mean * mean, B = P * own;
            // A hair above the target so rounding never lands a user below it.
            const double goal = target * (1.0 + 1e-12);
            const double c2 = goal * rest / (A - goal * B);
            return std::sqrt(std::clamp(c2, 0.0, 1.0));
        };
        const Matrix wP = d_P.cwiseProduct(eP), wS = d_S.cwiseProduct(eS);
        const Matrix self_P = pr.gains.zeta_f.transpose() * wP.cwiseProduct(pr.stats.rho_f);
        const Matrix self_S = pr.gains.zeta_g.transpose() * wS.cwiseProduct(pr.stats.rho_g);
        for (Eigen::Index k = 0; k < K; ++k) {
            const double mean = wP.col(k).cwiseSqrt().dot(pr.stats.rho_f.col(k));
            const double own = self_P(k, k);
            const double rest = pr.P_P * (self_P.row(k).sum() - own) + pr.P_S * zk(k) + 1.0;
            const double g = pr.P_P * mean * mean / (pr.P_P * own + rest);
            worst = std::max(worst, g / target - 1.0);
            if (g > target) scale_P(k) = solve_scale(mean, own, rest, pr.P_P);
        }
        for (Eigen::Index l = 0; l < L; ++l) {
            const double mean = wS.col(l).cwiseSqrt().dot(pr.stats.rho_g.col(l));
            const double own = self_S(l, l);
            const double rest = pr.P_S * (self_S.row(l).sum() - own) + pr.P_P * zl(l) + 1.0;
            const double g = pr.P_S * mean * mean / (pr.P_S * own + rest);
            worst = std::max(worst, g / target - 1.0);
            if (g > target) scale_S(l) = solve_scale(mean, own, rest, pr.P_S);
        }
        if (worst < 1e-9) break;
        bP = bP * scale_P.asDiagonal();
        bS = bS * scale_S.asDiagonal();
    }
    return {bP, bS};
}

} // namespace detail

/// Bisection on the common SINR target. The feasibility oracle supplies a
/// witness at the best feasible target; over-served users are then scaled
/// back so every user ends at that common SINR.
inline MaxMinResult maxmin_bisection(const MaxMinProblem& pr)
{
    require(pr.epsilon > 0.0, "epsilon must be positive");
    require(pr.w_P > 0.0 && pr.w_S > 0.0, "weights must be positive");
    require(pr.I_T.size() == pr.stats.rho_f.cols(), "I_T needs one entry per PU");
    MaxMinResult res;

    // Lower end: uniform allocation with the capped secondary power is a
    // feasible point of the problem with S-AP power P_S.
    PowerAllocation uni = capped_uniform_allocation(pr.stats, pr.gains, pr.clusters, pr.P_P, pr.P_S, pr.I_T);
    Matrix wit_P = uni.eta_P.cwiseSqrt();
    Matrix wit_S = (pr.P_S > 0.0 ? uni.eta_S * (uni.P_S / pr.P_S) : uni.eta_S).cwiseSqrt();
    const Vector g_uni = maxmin_sinrs(pr, wit_P, wit_S);
    double lo = g_uni.minCoeff();

    // Upper end: SINR with all interference removed and every AP at full budget.
    double bound = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < pr.stats.rho_f.cols(); ++k) {
        const double s = pr.clusters.delta_P.col(k).dot(pr.stats.rho_f.col(k).cwiseSqrt());
        bound = std::min(bound, pr.P_P * s * s);
    }
    for (Eigen::Index l = 0; l < pr.stats.rho_g.cols(); ++l) {
        const double s = pr.clusters.delta_S.col(l).dot(pr.stats.rho_g.col(l).cwiseSqrt());
        bound = std::min(bound, pr.P_S * s * s);
    }
    double hi = 2.0 * bound;
    if (pr.lambda_bounds) {
        lo = std::max(lo, pr.lambda_bounds->first);
        hi = pr.lambda_bounds->second;
    }
    auto finish = [&](double lambda) {
        auto [bP, bS] = detail::equalise(pr, wit_P, wit_S, lambda);
        res.beta_P = bP;
        res.beta_S = bS;
        res.alloc = {bP.cwiseAbs2(), bS.cwiseAbs2(), pr.P_P, pr.P_S};
        res.alloc.P_S = cap_secondary_power(
            secondary_cci_Zk(pr.stats, pr.gains, pr.clusters, res.alloc.eta_S), pr.I_T, pr.P_S);
        res.lambda_star = lambda;
        res.lambda_lo = lambda;
        return res;
    };
    if (!(bound > 0.0)) {
        res.lambda_hi = 0.0;
        return finish(0.0);
    }

    std::optional<std::pair<Matrix, Matrix>> warm = std::make_pair(wit_P, wit_S);
    auto probe = [&](double lambda) {
        auto fr = feasibility_check(pr, lambda, warm);
        if (fr.status == FeasibilityStatus::solver_failure)
            throw SolverFailure("feasibility solver did not converge at lambda = " + std::to_string(lambda));
        res.trajectory.push_back({lambda, fr.feasible});
        if (fr.feasible) {
            wit_P = fr.beta_P;
            wit_S = fr.beta_S;
            warm = std::make_pair(wit_P, wit_S);
        }
        return fr.feasible;
    };

    while (probe(hi)) {
        lo = hi;
        hi *= 2.0;
        if (++res.expansions >= 60) throw SolverFailure("could not bracket the max-min SINR");
    }
    res.initial_span = hi - lo;
    while (hi - lo > pr.epsilon) {
        const double mid = 0.5 * (lo + hi);
        if (probe(mid))
            lo = mid;
        else
            hi = mid;
        ++res.iterations;
    }
    finish(lo);
    res.lambda_hi = hi;
    return res;
}

} // namespace cfss

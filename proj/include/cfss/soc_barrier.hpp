#pragma once

#include "cfss/common.hpp"

#include <algorithm>
#include <utility>
#include <vector>

namespace cfss::soc {

/// Sparse linear form sum_j coef_j x_j.
struct LinearForm {
    std::vector<std::pair<int, double>> terms;

    double eval(const Vector& x) const
    {
        double s = 0.0;
        for (const auto& [j, c] : terms) s += c * x(j);
        return s;
    }
};

/// q(x) = sum_j w_j x_j^2 + (c^T x)^2.
struct QuadForm {
    std::vector<std::pair<int, double>> diag;
    LinearForm coherent;

    double eval(const Vector& x) const
    {
        double s = 0.0;
        for (const auto& [j, w] : diag) s += w * x(j) * x(j);
        const double c = coherent.eval(x);
        return s + c * c;
    }
};

/// sqrt(q(x) + 1) <= a^T x + s, where s is the shared slack.
struct Cone {
    LinearForm a;
    QuadForm q;
};

/// Problem: minimise s subject to every cone, q_i(x) <= 1 for each budget,
/// and x > 0.
struct Problem {
    int n = 0;
    std::vector<Cone> cones;
    std::vector<QuadForm> budgets;
};

enum class Status { feasible, infeasible, failed };

struct Result {
    Status status = Status::failed;
    Vector x;
    double slack = 0.0;
    double lower_bound = 0.0;
    int newton_steps = 0;
};

struct Options {
    double tolerance = 1e-6;
    double tau0 = 1.0;
    double tau_growth = 10.0;
    int max_newton = 400;
    /// Weight of the x > 0 barrier. Small weights keep the duality gap
    /// bound dominated by the cones and budgets.
    double positivity_weight = 1e-3;
};

/// Largest cone violation sqrt(q + 1) - a^T x at x.
inline double max_cone_violation(const Problem& p, const Vector& x)
{
    double v = -std::numeric_limits<double>::infinity();
    for (const auto& c : p.cones) v = std::max(v, std::sqrt(c.q.eval(x) + 1.0) - c.a.eval(x));
    return v;
}

namespace detail {

inline void add_outer_dense(Matrix& H, const Vector& v, double alpha)
{
    H.selfadjointView<Eigen::Lower>().rankUpdate(v, alpha);
}

inline void add_outer_sparse(Matrix& H, const std::vector<std::pair<int, double>>& v, double alpha)
{
    for (const auto& [i, vi] : v)
        for (const auto& [j, vj] : v) {
            if (j > i) continue;
            H(i, j) += alpha * vi * vj;
        }
}

class Barrier {
public:
    Barrier(const Problem& p, double pos_weight) : p_(p), n_(p.n), wx_(pos_weight) {}

    // Duality gap at a central point is degree() / tau.
    double degree() const
    {
        return 2.0 * static_cast<double>(p_.cones.size()) + static_cast<double>(p_.budgets.size()) +
               wx_ * n_;
    }

    // Returns false if z = (x, s) is outside the domain.
    bool value(const Vector& z, double tau, double& f) const
    {
        const auto x = z.head(n_);
        const double s = z(n_);
        f = tau * s;
        for (int j = 0; j < n_; ++j) {
            if (!(x(j) > 0.0)) return false;
            f -= wx_ * std::log(x(j));
        }
        for (const auto& b : p_.budgets) {
            const double g = 1.0 - b.eval(x);
            if (!(g > 0.0)) return false;
            f -= std::log(g);
        }
        for (const auto& c : p_.cones) {
            const double t = c.a.eval(x) + s;
            const double F = t * t - c.q.eval(x) - 1.0;
            if (!(t > 0.0) || !(F > 0.0)) return false;
            f -= std::log(F);
        }
        return true;
    }

    void derivatives(const Vector& z, double tau, Vector& grad, Matrix& H) const
    {
        const int m = n_ + 1;
        const auto x = z.head(n_);
        const double s = z(n_);
        grad = Vector::Zero(m);
        H = Matrix::Zero(m, m);
        grad(n_) = tau;
        for (int j = 0; j < n_; ++j) {
            grad(j) -= wx_ / x(j);
            H(j, j) += wx_ / (x(j) * x(j));
        }
        std::vector<std::pair<int, double>> sp;
        for (const auto& b : p_.budgets) {
            const double G = 1.0 - b.eval(x);
            const double cx = b.coherent.eval(x);
            // dq = 2 w x + 2 (c^T x) c; gradient of -log(1 - q) is dq / G.
            sp.clear();
            for (const auto& [j, w] : b.diag) sp.emplace_back(j, 2.0 * w * x(j));
            for (const auto& [j, c] : b.coherent.terms) sp.emplace_back(j, 2.0 * cx * c);
            for (const auto& [j, v] : sp) grad(j) += v / G;
            add_outer_sparse(H, sp, 1.0 / (G * G));
            for (const auto& [j, w] : b.diag) H(j, j) += 2.0 * w / G;
            add_outer_sparse(H, b.coherent.terms, 2.0 / G);
        }
        Vector dF(m);
        for (const auto& c : p_.cones) {
            const double t = c.a.eval(x) + s;
            const double cx = c.q.coherent.eval(x);
            const double F = t * t - c.q.eval(x) - 1.0;
            dF.setZero();
            for (const auto& [j, a] : c.a.terms) dF(j) += 2.0 * t * a;
            dF(n_) = 2.0 * t;
            for (const auto& [j, w] : c.q.diag) dF(j) -= 2.0 * w * x(j);
            for (const auto& [j, cc] : c.q.coherent.terms) dF(j) -= 2.0 * cx * cc;
            grad -= dF / F;
            add_outer_dense(H, dF, 1.0 / (F * F));
            sp.assign(c.a.terms.begin(), c.a.terms.end());
            sp.emplace_back(n_, 1.0);
            add_outer_sparse(H, sp, -2.0 / F);
            for (const auto& [j, w] : c.q.diag) H(j, j) += 2.0 * w / F;
            add_outer_sparse(H, c.q.coherent.terms, 2.0 / F);
        }
    }

private:
    const Problem& p_;
    int n_;
    double wx_;
};

} // namespace detail

/// Slack for which (x, s) is strictly inside every cone.
inline double initial_slack(const Problem& p, const Vector& x)
{
    double s = 0.0;
    for (const auto& c : p.cones)
        s = std::max(s, std::sqrt(c.q.eval(x) + 1.0) - c.a.eval(x));
    return s + 1.0;
}

/// Barrier method on min s. Stops as soon as an iterate has s < 0 (strictly
/// feasible witness) or the duality bound proves s* > tolerance.
/// `x0` must satisfy every budget strictly and be positive.
inline Result solve(const Problem& p, const Vector& x0, const Options& opt = {})
{
    Result r;
    detail::Barrier bar(p, opt.positivity_weight);
    const int m = p.n + 1;
    Vector z(m);
    z.head(p.n) = x0;
    z(p.n) = initial_slack(p, x0);
    const double theta = bar.degree();
    double tau = std::max(opt.tau0, theta / std::max(1.0, z(p.n)));
    Vector grad, step;
    Matrix H;
    auto finish = [&](Status st) {
        r.status = st;
        r.x = z.head(p.n);
        r.slack = z(p.n);
        return r;
    };
    double f = 0.0;
    if (!bar.value(z, tau, f)) return finish(Status::failed);

    while (r.newton_steps < opt.max_newton) {
        bool centred = false;
        while (r.newton_steps < opt.max_newton) {
            bar.derivatives(z, tau, grad, H);
            Eigen::LLT<Matrix, Eigen::Lower> llt(H);
            if (llt.info() != Eigen::Success) {
                H.diagonal().array() += 1e-12 * (1.0 + H.diagonal().array().abs());
                llt.compute(H);
                if (llt.info() != Eigen::Success) return finish(Status::failed);
            }
            step = -llt.solve(grad);
            const double dec = -grad.dot(step);
            ++r.newton_steps;
            if (dec < 1e-9) {
                centred = true;
                break;
            }
            double alpha = 1.0, fn = 0.0;
            bool moved = false;
            while (alpha > 1e-14) {
                const Vector zn = z + alpha * step;
                if (bar.value(zn, tau, fn) && fn <= f - 0.25 * alpha * dec) {
                    z = zn;
                    f = fn;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (z(p.n) < 0.0) return finish(Status::feasible);
            if (!moved) {
                // Rounding limits further progress; accept only a nearly centred point.
                centred = dec < 1e-6;
                break;
            }
        }
        if (!centred) return finish(Status::failed);
        r.lower_bound = z(p.n) - theta / tau;
        if (r.lower_bound > opt.tolerance) return finish(Status::infeasible);
        if (theta / tau < 1e-3 * opt.tolerance)
            return finish(z(p.n) <= opt.tolerance ? Status::feasible : Status::infeasible);
        tau *= opt.tau_growth;
        if (!bar.value(z, tau, f)) return finish(Status::failed);
    }
    return finish(Status::failed);
}

} // namespace cfss::soc

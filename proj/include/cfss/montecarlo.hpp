#pragma once

#include "cfss/rates.hpp"

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace cfss {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using cd = std::complex<double>;

/// One draw of the small-scale fading, scaled by the large-scale gains.
/// NOMA users use the a * K + k column layout.
struct ChannelRealization {
    CMatrix f, g, u, v;
};

/// Uplink training outcome for one channel draw. In NOMA mode the noise
/// matrices hold one column per cluster.
struct EstimationRealization {
    CMatrix f_hat, g_hat;
    CMatrix eps_f, eps_g;
    CMatrix noise_P, noise_S;
};

namespace detail {

using Normal = std::normal_distribution<double>;

inline cd draw_cn(std::mt19937_64& rng, Normal& n, double var)
{
    const double s = std::sqrt(var / 2.0);
    const double re = n(rng);
    const double im = n(rng);
    return {s * re, s * im};
}

// Each fill owns its distribution, so no cached normal leaks between
// calls and the stream depends on the rng state alone.
inline void fill_cn(CMatrix& out, const Matrix& var, std::mt19937_64& rng)
{
    Normal n;
    out.resize(var.rows(), var.cols());
    for (Eigen::Index j = 0; j < var.cols(); ++j)
        for (Eigen::Index i = 0; i < var.rows(); ++i) out(i, j) = draw_cn(rng, n, var(i, j));
}

inline void fill_cn(CMatrix& out, Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    Normal n;
    out.resize(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = draw_cn(rng, n, 1.0);
}

inline std::mt19937_64 batch_rng(std::uint64_t seed, std::uint32_t tag, std::uint32_t batch)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      tag, batch};
    return std::mt19937_64(seq);
}

} // namespace detail

/// Draws one realization: every entry is CN(0, zeta).
inline void draw_channel(const LinkGains& gains, std::mt19937_64& rng, ChannelRealization& out)
{
    detail::fill_cn(out.f, gains.zeta_f, rng);
    detail::fill_cn(out.g, gains.zeta_g, rng);
    detail::fill_cn(out.u, gains.zeta_u, rng);
    detail::fill_cn(out.v, gains.zeta_v, rng);
}

/// `trials` i.i.d. realizations from a stream that depends on `seed` only.
inline std::vector<ChannelRealization> draw_channels(const LinkGains& gains, std::uint64_t seed, long trials)
{
    require(trials >= 1, "trials must be at least 1");
    auto rng = detail::batch_rng(seed, 0xc4a1u, 0);
    std::vector<ChannelRealization> out(static_cast<std::size_t>(trials));
    for (auto& r : out) draw_channel(gains, rng, r);
    return out;
}

/// OMA training: y = sqrt(Pp) (own channel + paired user's channel) + noise,
/// followed by the MMSE scaling held in `stats`.
inline EstimationRealization simulate_ul_estimation(const ChannelRealization& ch, const UlEstimateStats& stats,
                                                    std::mt19937_64& rng)
{
    EstimationRealization e;
    const double sq = std::sqrt(stats.Pp);
    detail::fill_cn(e.noise_P, ch.f.rows(), ch.f.cols(), rng);
    detail::fill_cn(e.noise_S, ch.g.rows(), ch.g.cols(), rng);
    CMatrix yP = sq * ch.f + e.noise_P;
    CMatrix yS = sq * ch.g + e.noise_S;
    for (int q = 0; q < stats.Q; ++q) {
        yP.col(q) += sq * ch.v.col(q);
        yS.col(q) += sq * ch.u.col(q);
    }
    e.f_hat = stats.c_P.cast<cd>().cwiseProduct(yP);
    e.g_hat = stats.c_S.cast<cd>().cwiseProduct(yS);
    e.eps_f = ch.f - e.f_hat;
    e.eps_g = ch.g - e.g_hat;
    return e;
}

/// NOMA training: a cluster shares one pilot, so each member's estimate is
/// sqrt(Pp) zeta / D times the same received sample.
inline EstimationRealization simulate_ul_estimation_noma(const ChannelRealization& ch, const NomaUlStats& stats,
                                                         const LinkGains& gains, std::mt19937_64& rng)
{
    const auto& sh = stats.shape;
    const double sq = std::sqrt(stats.Pp);
    EstimationRealization e;
    detail::fill_cn(e.noise_P, ch.f.rows(), sh.A, rng);
    detail::fill_cn(e.noise_S, ch.g.rows(), sh.B, rng);
    e.f_hat.resize(ch.f.rows(), ch.f.cols());
    e.g_hat.resize(ch.g.rows(), ch.g.cols());
    for (int a = 0; a < sh.A; ++a) {
        CVector y = e.noise_P.col(a);
        for (int i = 0; i < sh.K; ++i) y += sq * ch.f.col(sh.pu(a, i));
        if (stats.cluster_shared(a))
            for (int j = 0; j < sh.L; ++j) y += sq * ch.v.col(sh.su(a, j));
        for (int k = 0; k < sh.K; ++k) {
            const int p = sh.pu(a, k);
            for (Eigen::Index m = 0; m < y.size(); ++m)
                e.f_hat(m, p) = sq * gains.zeta_f(m, p) / stats.D_P(m, a) * y(m);
        }
    }
    for (int b = 0; b < sh.B; ++b) {
        CVector y = e.noise_S.col(b);
        for (int j = 0; j < sh.L; ++j) y += sq * ch.g.col(sh.su(b, j));
        if (stats.cluster_shared(b))
            for (int i = 0; i < sh.K; ++i) y += sq * ch.u.col(sh.pu(b, i));
        for (int l = 0; l < sh.L; ++l) {
            const int q = sh.su(b, l);
            for (Eigen::Index n = 0; n < y.size(); ++n)
                e.g_hat(n, q) = sq * gains.zeta_g(n, q) / stats.D_S(n, b) * y(n);
        }
    }
    e.eps_f = ch.f - e.f_hat;
    e.eps_g = ch.g - e.g_hat;
    return e;
}

// ---------------------------------------------------------------- reports

enum class CheckKind {
    two_sided,  ///< |emp - cf| <= max(rel_tol |cf|, band * stderr)
    upper_bound ///< emp <= cf, the closed form being an upper bound
};

struct MomentRow {
    std::string name;
    double closed_form = 0.0;
    double empirical = 0.0;
    double std_error = 0.0;
    double rel_dev = 0.0;
    double tolerance = 0.0; ///< allowed |emp - cf|; for bounds, the margin cf - emp
    bool pass = true;
    bool gating = true; ///< informational rows never fail a suite
    CheckKind kind = CheckKind::two_sided;
};

struct MomentReport {
    std::vector<MomentRow> rows;

    bool all_pass() const
    {
        return std::all_of(rows.begin(), rows.end(), [](const MomentRow& r) { return r.pass || !r.gating; });
    }
    void append(const MomentReport& o) { rows.insert(rows.end(), o.rows.begin(), o.rows.end()); }
    const MomentRow* find(const std::string& name) const
    {
        for (const auto& r : rows)
            if (r.name == name) return &r;
        return nullptr;
    }
};

struct McOptions {
    std::uint64_t seed = 1;
    long trials = 100000;
    int batches = 50;
    double rel_tol = 0.02;
    double stderr_band = 4.0;
    unsigned threads = 0; ///< 0 picks the hardware concurrency
};

namespace detail {

/// Per-batch sample means of a fixed set of per-trial statistics.
/// Results depend on (seed, tag, batch) only, never on the thread count.
class BatchMeans {
public:
    using Trial = std::function<void(std::mt19937_64&, double*)>;

    BatchMeans(int stats, const McOptions& opt) : n_(stats), opt_(opt)
    {
        require(opt.trials >= 1, "trials must be at least 1");
        require(opt.batches >= 2, "at least two batches are needed for a standard error");
        require(opt.trials >= opt.batches, "trials must be at least the batch count");
    }

    /// `make` builds one per-thread trial functor.
    void run(std::uint32_t tag, const std::function<Trial()>& make)
    {
        const int B = opt_.batches;
        means_.assign(static_cast<std::size_t>(B), Vector::Zero(n_));
        std::atomic<int> next{0};
        auto worker = [&] {
            Trial trial = make();
            std::vector<double> acc(static_cast<std::size_t>(n_));
            std::vector<double> one(static_cast<std::size_t>(n_));
            for (int b = next++; b < B; b = next++) {
                const long lo = opt_.trials * b / B, hi = opt_.trials * (b + 1) / B;
                auto rng = batch_rng(opt_.seed, tag, static_cast<std::uint32_t>(b));
                std::fill(acc.begin(), acc.end(), 0.0);
                for (long t = lo; t < hi; ++t) {
                    std::fill(one.begin(), one.end(), 0.0);
                    trial(rng, one.data());
                    for (int i = 0; i < n_; ++i) acc[static_cast<std::size_t>(i)] += one[static_cast<std::size_t>(i)];
                }
                Vector& m = means_[static_cast<std::size_t>(b)];
                for (int i = 0; i < n_; ++i) m(i) = acc[static_cast<std::size_t>(i)] / static_cast<double>(hi - lo);
            }
        };
        unsigned T = opt_.threads ? opt_.threads : std::max(1u, std::thread::hardware_concurrency());
        T = std::min<unsigned>(T, static_cast<unsigned>(B));
        std::vector<std::thread> pool;
        for (unsigned i = 1; i < T; ++i) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        // Batches may differ in size by one trial; weight them accordingly.
        pooled_ = Vector::Zero(n_);
        for (int b = 0; b < B; ++b) {
            const long sz = opt_.trials * (b + 1) / B - opt_.trials * b / B;
            pooled_ += means_[static_cast<std::size_t>(b)] * static_cast<double>(sz);
        }
        pooled_ /= static_cast<double>(opt_.trials);
    }

    /// Adds a row whose empirical value is `fn` of the pooled means and
    /// whose standard error is the spread of `fn` across batches.
    void row(MomentReport& rep, std::string name, double closed_form, const std::function<double(const Vector&)>& fn,
             bool gating = true, CheckKind kind = CheckKind::two_sided) const
    {
        MomentRow r;
        r.name = std::move(name);
        r.closed_form = closed_form;
        r.empirical = fn(pooled_);
        double s = 0.0, s2 = 0.0;
        for (const auto& m : means_) {
            const double x = fn(m);
            s += x;
            s2 += x * x;
        }
        const double B = static_cast<double>(means_.size());
        const double var = std::max(0.0, (s2 - s * s / B) / (B - 1.0));
        r.std_error = std::sqrt(var / B);
        const double diff = std::abs(r.empirical - closed_form);
        r.rel_dev = diff / std::max(std::abs(closed_form), std::numeric_limits<double>::min());
        r.gating = gating;
        r.kind = kind;
        if (kind == CheckKind::two_sided) {
            r.tolerance = std::max(opt_.rel_tol * std::abs(closed_form), opt_.stderr_band * r.std_error);
            r.pass = diff <= r.tolerance;
        } else {
            r.tolerance = closed_form - r.empirical;
            r.pass = r.empirical <= closed_form;
        }
        rep.rows.push_back(std::move(r));
    }

private:
    int n_;
    McOptions opt_;
    std::vector<Vector> means_;
    Vector pooled_;
};

inline std::string idx(const char* base, long i) { return std::string(base) + "[" + std::to_string(i) + "]"; }

inline std::string idx(const char* base, long i, long j)
{
    return std::string(base) + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
}

inline Matrix amplitude(const Matrix& delta, const Matrix& eta) { return delta.cwiseProduct(eta).cwiseSqrt(); }

} // namespace detail

// ---------------------------------------------------------------- OMA

/// Everything the OMA oracles need about one deployment.
struct OmaScenario {
    LinkGains gains;
    UlEstimateStats stats;
    ClusterAssignment clusters;
    PowerAllocation alloc; ///< noise-normalised, P_S already capped
    double Ppd = 0.0;      ///< tau_pd * P_d / noise
    int tau_c = 196, tau_p = 1, tau_pd = 0;
};

namespace detail {

// Effective channels of one OMA draw.
struct OmaEffective {
    CMatrix mu_P, lam_P, mu_S, lam_S;
};

inline OmaEffective oma_effective(const ChannelRealization& ch, const EstimationRealization& e, const Matrix& Wp,
                                  const Matrix& Ws)
{
    const CMatrix fw = Wp.cast<cd>().cwiseProduct(e.f_hat).conjugate();
    const CMatrix gw = Ws.cast<cd>().cwiseProduct(e.g_hat).conjugate();
    return {ch.f.transpose() * fw, ch.u.transpose() * gw, ch.g.transpose() * gw, ch.v.transpose() * fw};
}

} // namespace detail

/// Uplink estimation identities: E|f_hat|^2 = rho, E|eps|^2 = zeta - rho,
/// E[f_hat conj(eps)] = 0 and the pilot-sharing correlations.
inline MomentReport empirical_ul_oma(const OmaScenario& sc, const McOptions& opt)
{
    const auto& g = sc.gains;
    const auto M = g.zeta_f.rows(), K = g.zeta_f.cols(), N = g.zeta_g.rows(), L = g.zeta_g.cols();
    const int Q = sc.stats.Q;
    const int nf = static_cast<int>(M * K), ng = static_cast<int>(N * L);
    const int nv = static_cast<int>(M) * Q, nu = static_cast<int>(N) * Q;
    // Layout: |f_hat|^2, |eps_f|^2, Re f_hat conj(eps_f), same for g, Re v conj(f_hat), Re u conj(g_hat).
    const int o_f = 0, o_g = 3 * nf, o_v = o_g + 3 * ng, o_u = o_v + nv, total = o_u + nu;
    detail::BatchMeans bm(total, opt);
    bm.run(0x01u, [&] {
        return [&, ch = ChannelRealization{}](std::mt19937_64& rng, double* s) mutable {
            draw_channel(g, rng, ch);
            const auto e = simulate_ul_estimation(ch, sc.stats, rng);
            for (Eigen::Index k = 0; k < K; ++k)
                for (Eigen::Index m = 0; m < M; ++m) {
                    const auto i = k * M + m;
                    s[o_f + i] = std::norm(e.f_hat(m, k));
                    s[o_f + nf + i] = std::norm(e.eps_f(m, k));
                    s[o_f + 2 * nf + i] = std::real(e.f_hat(m, k) * std::conj(e.eps_f(m, k)));
                }
            for (Eigen::Index l = 0; l < L; ++l)
                for (Eigen::Index n = 0; n < N; ++n) {
                    const auto i = l * N + n;
                    s[o_g + i] = std::norm(e.g_hat(n, l));
                    s[o_g + ng + i] = std::norm(e.eps_g(n, l));
                    s[o_g + 2 * ng + i] = std::real(e.g_hat(n, l) * std::conj(e.eps_g(n, l)));
                }
            for (int q = 0; q < Q; ++q) {
                for (Eigen::Index m = 0; m < M; ++m)
                    s[o_v + q * M + m] = std::real(ch.v(m, q) * std::conj(e.f_hat(m, q)));
                for (Eigen::Index n = 0; n < N; ++n)
                    s[o_u + q * N + n] = std::real(ch.u(n, q) * std::conj(e.g_hat(n, q)));
            }
        };
    });
    MomentReport rep;
    auto at = [](int i) { return [i](const Vector& x) { return x(i); }; };
    for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index m = 0; m < M; ++m) {
            const int i = static_cast<int>(k * M + m);
            bm.row(rep, detail::idx("ul.E|f_hat|^2", m, k), sc.stats.rho_f(m, k), at(o_f + i));
            bm.row(rep, detail::idx("ul.E|eps_f|^2", m, k), g.zeta_f(m, k) - sc.stats.rho_f(m, k), at(o_f + nf + i));
            bm.row(rep, detail::idx("ul.E[f_hat*conj(eps_f)]", m, k), 0.0, at(o_f + 2 * nf + i));
        }
    for (Eigen::Index l = 0; l < L; ++l)
        for (Eigen::Index n = 0; n < N; ++n) {
            const int i = static_cast<int>(l * N + n);
            bm.row(rep, detail::idx("ul.E|g_hat|^2", n, l), sc.stats.rho_g(n, l), at(o_g + i));
            bm.row(rep, detail::idx("ul.E|eps_g|^2", n, l), g.zeta_g(n, l) - sc.stats.rho_g(n, l), at(o_g + ng + i));
            bm.row(rep, detail::idx("ul.E[g_hat*conj(eps_g)]", n, l), 0.0, at(o_g + 2 * ng + i));
        }
    for (int q = 0; q < Q; ++q) {
        for (Eigen::Index m = 0; m < M; ++m)
            bm.row(rep, detail::idx("ul.E[v*conj(f_hat)]", m, q), sc.stats.rho_v(m, q),
                   at(o_v + q * static_cast<int>(M) + static_cast<int>(m)));
        for (Eigen::Index n = 0; n < N; ++n)
            bm.row(rep, detail::idx("ul.E[u*conj(g_hat)]", n, q), sc.stats.rho_u(n, q),
                   at(o_u + q * static_cast<int>(N) + static_cast<int>(n)));
    }
    return rep;
}

namespace detail {

// Statistical-CSI terms for one side of an OMA deployment, plus the
// measured interference power with random symbols from the other system.
struct OmaSideLayout {
    int mean, second, inter, cross, cci;
    int users;
};

} // namespace detail

/// Terms of the statistical-CSI SINR of every OMA user (desired mean,
/// beamforming-gain variance, intra-system and cross-system interference),
/// the SINR assembled from the empirical terms, and the measured
/// cross-system interference power with random data symbols.
inline MomentReport empirical_sinr_oma(const OmaScenario& sc, const McOptions& opt)
{
    const auto& g = sc.gains;
    const auto& st = sc.stats;
    const auto& al = sc.alloc;
    require_normalised(sc.clusters.delta_P, al.eta_P, st.rho_f, "primary");
    require_normalised(sc.clusters.delta_S, al.eta_S, st.rho_g, "secondary");
    const int K = static_cast<int>(g.zeta_f.cols()), L = static_cast<int>(g.zeta_g.cols());
    const Matrix Wp = detail::amplitude(sc.clusters.delta_P, al.eta_P);
    const Matrix Ws = detail::amplitude(sc.clusters.delta_S, al.eta_S);
    // Per user: Re mu_kk, |mu_kk|^2, sum_{i!=k} |mu_ki|^2, sum_l |lambda_kl|^2, measured CCI power.
    const int per = 5, oP = 0, oS = per * K, total = per * (K + L);
    detail::BatchMeans bm(total, opt);
    bm.run(0x02u, [&] {
        return [&, ch = ChannelRealization{}, sym = CMatrix{}](std::mt19937_64& rng, double* s) mutable {
            draw_channel(g, rng, ch);
            const auto e = simulate_ul_estimation(ch, st, rng);
            const auto eff = detail::oma_effective(ch, e, Wp, Ws);
            detail::fill_cn(sym, K + L, 1, rng);
            const CVector qP = sym.col(0).head(K), qS = sym.col(0).tail(L);
            auto side = [&](const CMatrix& mu, const CMatrix& lam, const CVector& q_oth, double P_oth, int n, int o) {
                for (int k = 0; k < n; ++k) {
                    s[o + per * k + 0] = std::real(mu(k, k));
                    s[o + per * k + 1] = std::norm(mu(k, k));
                    s[o + per * k + 2] = mu.row(k).cwiseAbs2().sum() - std::norm(mu(k, k));
                    s[o + per * k + 3] = lam.row(k).cwiseAbs2().sum();
                    s[o + per * k + 4] = P_oth * std::norm(lam.row(k).dot(q_oth.conjugate()));
                }
            };
            side(eff.mu_P, eff.lam_P, qS, al.P_S, K, oP);
            side(eff.mu_S, eff.lam_S, qP, al.P_P, L, oS);
        };
    });

    MomentReport rep;
    const Vector Zk = secondary_cci_Zk(st, g, sc.clusters, al.eta_S);
    const Vector Zl = primary_cci_at_su(st, g, sc.clusters, al.eta_P);
    const Vector gP = sinr_primary_oma(st, g, sc.clusters, al);
    const Vector gS = sinr_secondary_oma(st, g, sc.clusters, al);
    const Vector gP_pr = sinr_primary_oma(st, g, sc.clusters, al, FormulaVariant::as_printed);
    const Vector gS_pr = sinr_secondary_oma(st, g, sc.clusters, al, FormulaVariant::as_printed);
    const Vector Zk_pr = secondary_cci_Zk(st, g, sc.clusters, al.eta_S, FormulaVariant::as_printed);
    const Vector Zl_pr = primary_cci_at_su(st, g, sc.clusters, al.eta_P, FormulaVariant::as_printed);

    auto emit = [&](const char* tag, int n, int o, const Matrix& W, const Matrix& rho, const Matrix& zeta,
                    double P_own, double P_oth, const Vector& Z, const Vector& Z_pr, const Vector& gamma,
                    const Vector& gamma_pr) {
        const std::string t(tag);
        const Matrix vki = zeta.transpose() * W.cwiseAbs2().cwiseProduct(rho);
        for (int k = 0; k < n; ++k) {
            const int b = o + per * k;
            const double mean = W.col(k).dot(rho.col(k));
            const double var = vki(k, k);
            const double inter = vki.row(k).sum() - vki(k, k);
            auto emp_mean = [b](const Vector& x) { return x(b); };
            auto emp_var = [b](const Vector& x) { return x(b + 1) - x(b) * x(b); };
            auto emp_inter = [b](const Vector& x) { return x(b + 2); };
            auto emp_cross = [b](const Vector& x) { return x(b + 3); };
            bm.row(rep, detail::idx((t + ".mean_mu").c_str(), k), mean, emp_mean);
            bm.row(rep, detail::idx((t + ".var_mu").c_str(), k), var, emp_var);
            bm.row(rep, detail::idx((t + ".inter_own").c_str(), k), inter, emp_inter);
            bm.row(rep, detail::idx((t + ".cross_Z").c_str(), k), Z(k), emp_cross);
            bm.row(rep, detail::idx((t + ".cross_Z.as_printed").c_str(), k), Z_pr(k), emp_cross, false);
            bm.row(rep, detail::idx((t + ".cci_power").c_str(), k), P_oth * Z(k),
                   [b](const Vector& x) { return x(b + 4); });
            auto sinr = [b, P_own, P_oth](const Vector& x) {
                const double m = x(b);
                return P_own * m * m / (P_own * (x(b + 1) - m * m + x(b + 2)) + P_oth * x(b + 3) + 1.0);
            };
            bm.row(rep, detail::idx((t + ".sinr").c_str(), k), gamma(k), sinr);
            bm.row(rep, detail::idx((t + ".sinr.as_printed").c_str(), k), gamma_pr(k), sinr, false);
        }
    };
    emit("oma.pu", K, oP, Wp, st.rho_f, g.zeta_f, al.P_P, al.P_S, Zk, Zk_pr, gP, gP_pr);
    emit("oma.su", L, oS, Ws, st.rho_g, g.zeta_g, al.P_S, al.P_P, Zl, Zl_pr, gS, gS_pr);
    return rep;
}

/// Secondary interference power at every PU per unit S-AP power and the
/// power actually received with random secondary symbols at the capped P_S.
inline MomentReport empirical_Zk(const OmaScenario& sc, const McOptions& opt)
{
    MomentReport all = empirical_sinr_oma(sc, opt), rep;
    for (const auto& r : all.rows)
        if (r.name.rfind("oma.pu.cross_Z", 0) == 0 || r.name.rfind("oma.pu.cci_power", 0) == 0) rep.rows.push_back(r);
    return rep;
}

/// Downlink-pilot oracle: LMMSE estimate of mu_kk from the beamformed
/// pilot, its error variance, the cross gains, and sampled instantaneous
/// rates against the Jensen bound.
inline MomentReport empirical_dl_pilot(const OmaScenario& sc, const McOptions& opt)
{
    const auto& g = sc.gains;
    const auto& st = sc.stats;
    const auto& al = sc.alloc;
    const int K = static_cast<int>(g.zeta_f.cols()), L = static_cast<int>(g.zeta_g.cols());
    const Matrix Wp = detail::amplitude(sc.clusters.delta_P, al.eta_P);
    const Matrix Ws = detail::amplitude(sc.clusters.delta_S, al.eta_S);
    const auto dl = dl_stats_oma(st, g, sc.clusters, al, sc.Ppd);
    const Vector gP = sinr_primary_oma_dlpilot(dl, st, g, sc.clusters, al);
    const Vector gS = sinr_secondary_oma_dlpilot(dl, st, g, sc.clusters, al);
    const double pl = prelog(sc.tau_c, sc.tau_p + sc.tau_pd);
    const double sq = std::sqrt(sc.Ppd);

    struct SideCf {
        Vector mean, v, u, lmean, gamma, gain, den;
        double P = 0.0;
    };
    auto make_cf = [&](const Vector& mean, const Vector& v, const Vector& u, const Vector& lmean,
                       const Vector& kappa, const Vector& gamma, double P) {
        SideCf c{mean, v, u, lmean, gamma, Vector(mean.size()), Vector(mean.size()), P};
        for (Eigen::Index k = 0; k < mean.size(); ++k) {
            c.gain(k) = sq * v(k) / (sc.Ppd * (v(k) + u(k)) + 1.0);
            const double num = mean(k) * mean(k) + v(k) - kappa(k);
            c.den(k) = gamma(k) > 0.0 ? P * num / gamma(k) : 1.0;
        }
        return c;
    };
    const SideCf cP = make_cf(dl.mean_P, dl.v_Pkk, dl.u_Pkk, dl.lambda_mean_P, dl.kappa_P, gP, al.P_P);
    const SideCf cS = make_cf(dl.mean_S, dl.v_Sll, dl.u_Sll, dl.lambda_mean_S, dl.kappa_S, gS, al.P_S);

    // Per user: |mu - mu_hat|^2, |mu_hat|^2, Re lambda_kk, |lambda_kk|^2, rate sample,
    // then |mu_ki|^2 for every i and |lambda_kj|^2 for every j of the other system.
    const int perP = 5 + K + L, perS = 5 + L + K;
    const int oP = 0, oS = perP * K, total = oS + perS * L;
    detail::BatchMeans bm(total, opt);
    bm.run(0x03u, [&] {
        return [&, ch = ChannelRealization{}, nz = CMatrix{}](std::mt19937_64& rng, double* s) mutable {
            draw_channel(g, rng, ch);
            const auto e = simulate_ul_estimation(ch, st, rng);
            const auto eff = detail::oma_effective(ch, e, Wp, Ws);
            detail::fill_cn(nz, K + L, 1, rng);
            auto side = [&](const CMatrix& mu, const CMatrix& lam, const SideCf& c, int n, int n_oth, int o, int per,
                            int noise_off) {
                for (int k = 0; k < n; ++k) {
                    const cd lk = k < st.Q ? lam(k, k) : cd{0.0, 0.0};
                    const cd y = sq * (mu(k, k) + lk) + nz(noise_off + k, 0);
                    const cd mu_hat = c.mean(k) + c.gain(k) * (y - sq * (c.mean(k) + c.lmean(k)));
                    double* r = s + o + per * k;
                    r[0] = std::norm(mu(k, k) - mu_hat);
                    r[1] = std::norm(mu_hat);
                    r[2] = std::real(lk);
                    r[3] = std::norm(lk);
                    r[4] = pl * std::log2(1.0 + c.P * std::norm(mu_hat) / c.den(k));
                    for (int i = 0; i < n; ++i) r[5 + i] = std::norm(mu(k, i));
                    for (int j = 0; j < n_oth; ++j) r[5 + n + j] = std::norm(lam(k, j));
                }
            };
            side(eff.mu_P, eff.lam_P, cP, K, L, oP, perP, 0);
            side(eff.mu_S, eff.lam_S, cS, L, K, oS, perS, K);
        };
    });

    MomentReport rep;
    auto emit = [&](const char* tag, const SideCf& c, const Vector& kappa, const Matrix& vki, const Matrix& W_oth,
                    const Matrix& rho_oth, const Matrix& zeta_cross, const Matrix& rho_cross, int n, int n_oth, int o,
                    int per) {
        const std::string t(tag);
        for (int k = 0; k < n; ++k) {
            const int b = o + per * k;
            bm.row(rep, detail::idx((t + ".E|mu-mu_hat|^2").c_str(), k), kappa(k),
                   [b](const Vector& x) { return x(b); });
            bm.row(rep, detail::idx((t + ".E|mu_hat|^2").c_str(), k), c.mean(k) * c.mean(k) + c.v(k) - kappa(k),
                   [b](const Vector& x) { return x(b + 1); });
            if (k < st.Q) {
                bm.row(rep, detail::idx((t + ".E[lambda_kk]").c_str(), k), c.lmean(k),
                       [b](const Vector& x) { return x(b + 2); });
                bm.row(rep, detail::idx((t + ".var_lambda_kk").c_str(), k), c.u(k),
                       [b](const Vector& x) { return x(b + 3) - x(b + 2) * x(b + 2); });
            }
            for (int i = 0; i < n; ++i) {
                if (i == k) {
                    bm.row(rep, detail::idx((t + ".E|mu_kk|^2").c_str(), k), c.mean(k) * c.mean(k) + c.v(k),
                           [b, i](const Vector& x) { return x(b + 5 + i); });
                    continue;
                }
                bm.row(rep, detail::idx((t + ".E|mu_ki|^2").c_str(), k, i), vki(k, i),
                       [b, i](const Vector& x) { return x(b + 5 + i); });
            }
            for (int j = 0; j < n_oth; ++j) {
                double cf = W_oth.col(j).cwiseAbs2().cwiseProduct(rho_oth.col(j)).dot(zeta_cross.col(k));
                if (j == k && k < st.Q) {
                    const double m = W_oth.col(j).dot(rho_cross.col(k));
                    cf += m * m;
                }
                bm.row(rep, detail::idx((t + ".E|lambda_kj|^2").c_str(), k, j), cf,
                       [b, n, j](const Vector& x) { return x(b + 5 + n + j); });
            }
            bm.row(rep, detail::idx((t + ".jensen").c_str(), k), pl * std::log2(1.0 + c.gamma(k)),
                   [b](const Vector& x) { return x(b + 4); }, true, CheckKind::upper_bound);
        }
    };
    emit("dl.pu", cP, dl.kappa_P, dl.v_Pki, Ws, st.rho_g, g.zeta_u, st.rho_u, K, L, oP, perP);
    emit("dl.su", cS, dl.kappa_S, dl.v_Slj, Wp, st.rho_f, g.zeta_v, st.rho_v, L, K, oS, perS);
    return rep;
}

// ---------------------------------------------------------------- NOMA

struct NomaScenario {
    LinkGains gains;
    NomaUlStats stats;
    NomaOrdering order;
    PowerAllocation alloc;
    SicModel sic;
    double Ppd = 0.0;
    int tau_c = 196, tau_p = 1, tau_pd = 0;
};

namespace detail {

struct NomaEffective {
    CMatrix mu_P, lam_P, mu_S, lam_S;
};

inline NomaEffective noma_effective(const ChannelRealization& ch, const EstimationRealization& e, const Matrix& Wp,
                                    const Matrix& Ws)
{
    const CMatrix fw = Wp.cast<cd>().cwiseProduct(e.f_hat).conjugate();
    const CMatrix gw = Ws.cast<cd>().cwiseProduct(e.g_hat).conjugate();
    return {ch.f.transpose() * fw, ch.u.transpose() * gw, ch.g.transpose() * gw, ch.v.transpose() * fw};
}

} // namespace detail

/// NOMA oracle under statistical CSI: alpha identities, the intra-cluster
/// means, the SIC residual with q = theta q_hat + e, the pilot-sharing and
/// cross-system terms, Z_ak, and the SINR assembled from empirical terms.
inline MomentReport empirical_noma(const NomaScenario& sc, const McOptions& opt)
{
    const auto& g = sc.gains;
    const auto& st = sc.stats;
    const auto& sh = st.shape;
    const auto& al = sc.alloc;
    const int UP = sh.A * sh.K, US = sh.B * sh.L;
    const Matrix Wp = al.eta_P.cwiseSqrt(), Ws = al.eta_S.cwiseSqrt();
    const NomaSide vP = noma_primary_side(st, g, al), vS = noma_secondary_side(st, g, al);
    const auto M = g.zeta_f.rows(), N = g.zeta_g.rows();

    // Per own user p (S = cluster size, So = paired cluster size, U_o = other users):
    // Re mu_{p,t} and |mu_{p,t}|^2 per member t, power to foreign clusters,
    // SIC residual power, Re lambda_{p,j} per paired member, sum |lambda|^2.
    struct Lay {
        int S, So, per, o;
    };
    const Lay lP{sh.K, sh.L, 2 * sh.K + 2 + sh.L + 1, static_cast<int>(M * UP + N * US)};
    const Lay lS{sh.L, sh.K, 2 * sh.L + 2 + sh.K + 1, lP.o + lP.per * UP};
    const int total = lS.o + lS.per * US;

    auto residual_set = [](const std::vector<std::vector<int>>& ord, int a, int k) {
        const auto rank = detail::ranks_of(ord[static_cast<std::size_t>(a)]);
        std::vector<int> weaker;
        for (int t = 0; t < static_cast<int>(rank.size()); ++t)
            if (rank[static_cast<std::size_t>(t)] > rank[static_cast<std::size_t>(k)]) weaker.push_back(t);
        return weaker;
    };

    detail::BatchMeans bm(total, opt);
    bm.run(0x04u, [&] {
        return [&, ch = ChannelRealization{}, qh = CMatrix{}, ee = CMatrix{}](std::mt19937_64& rng,
                                                                           double* s) mutable {
            draw_channel(g, rng, ch);
            const auto e = simulate_ul_estimation_noma(ch, st, g, rng);
            for (Eigen::Index p = 0; p < UP; ++p)
                for (Eigen::Index m = 0; m < M; ++m) s[p * M + m] = std::norm(e.f_hat(m, p));
            for (Eigen::Index q = 0; q < US; ++q)
                for (Eigen::Index n = 0; n < N; ++n) s[M * UP + q * N + n] = std::norm(e.g_hat(n, q));
            const auto eff = detail::noma_effective(ch, e, Wp, Ws);
            detail::fill_cn(qh, UP + US, 1, rng);
            detail::fill_cn(ee, UP + US, 1, rng);
            auto side = [&](const CMatrix& mu, const CMatrix& lam, const NomaSide& v, const Lay& l,
                            const std::vector<std::vector<int>>& ord, const Vector& sig2, int sym_off) {
                for (int p = 0; p < v.users(); ++p) {
                    const int a = v.cluster_of(p), k = p % l.S;
                    double* r = s + l.o + l.per * p;
                    for (int t = 0; t < l.S; ++t) {
                        const cd x = mu(p, a * l.S + t);
                        r[t] = std::real(x);
                        r[l.S + t] = std::norm(x);
                    }
                    double foreign = 0.0;
                    for (int q = 0; q < v.users(); ++q)
                        if (v.cluster_of(q) != a) foreign += std::norm(mu(p, q));
                    r[2 * l.S] = foreign;
                    cd res{0.0, 0.0};
                    for (int t : residual_set(ord, a, k)) {
                        const int q = a * l.S + t;
                        const double th = SicModel::theta_of(sig2(q));
                        const cd q_hat = qh(sym_off + q, 0);
                        const cd sym = th * q_hat + std::sqrt(1.0 - th * th) * ee(sym_off + q, 0);
                        res += mu(p, q) * sym - v.theta(p, t) * q_hat;
                    }
                    r[2 * l.S + 1] = std::norm(res);
                    for (int j = 0; j < l.So; ++j) r[2 * l.S + 2 + j] = v.paired(a) ? std::real(lam(p, a * l.So + j)) : 0.0;
                    r[2 * l.S + 2 + l.So] = lam.row(p).cwiseAbs2().sum();
                }
            };
            side(eff.mu_P, eff.lam_P, vP, lP, sc.order.primary, sc.sic.sigma_e2_P, 0);
            side(eff.mu_S, eff.lam_S, vS, lS, sc.order.secondary, sc.sic.sigma_e2_S, UP);
        };
    });

    MomentReport rep;
    for (Eigen::Index p = 0; p < UP; ++p)
        for (Eigen::Index m = 0; m < M; ++m) {
            const int i = static_cast<int>(p * M + m);
            bm.row(rep, detail::idx("noma.ul.alpha_f", m, p), st.alpha_f(m, p), [i](const Vector& x) { return x(i); });
        }
    for (Eigen::Index q = 0; q < US; ++q)
        for (Eigen::Index n = 0; n < N; ++n) {
            const int i = static_cast<int>(M * UP + q * N + n);
            bm.row(rep, detail::idx("noma.ul.alpha_g", n, q), st.alpha_g(n, q), [i](const Vector& x) { return x(i); });
        }

    const bool printable = M == N;
    auto emit = [&](const char* tag, const NomaSide& v, const Lay& l, const std::vector<std::vector<int>>& ord,
                    const Vector& sig2, double P_own, double P_oth, const Vector& gamma, const Vector& gamma_pr,
                    const Vector& Z, const Vector& Z_pr) {
        const std::string t(tag);
        const Matrix vo = v.var_own();
        for (int p = 0; p < v.users(); ++p) {
            const int a = v.cluster_of(p), k = p % l.S;
            const int b = l.o + l.per * p;
            const auto rank = detail::ranks_of(ord[static_cast<std::size_t>(a)]);
            const auto weaker = residual_set(ord, a, k);
            double I1 = 0.0, res_cf = 0.0, sic_cf = 0.0, I3 = 0.0, foreign = 0.0;
            for (int tt = 0; tt < l.S; ++tt) {
                const int q = a * l.S + tt;
                const double th = v.theta(p, tt);
                bm.row(rep, detail::idx((t + ".theta").c_str(), p, tt), th, [b, tt](const Vector& x) { return x(b + tt); });
                bm.row(rep, detail::idx((t + ".var_mu").c_str(), p, tt), vo(p, q), [b, tt, &l](const Vector& x) {
                    return x(b + l.S + tt) - x(b + tt) * x(b + tt);
                });
                if (rank[static_cast<std::size_t>(tt)] < rank[static_cast<std::size_t>(k)]) I1 += th * th;
            }
            for (int t2 : weaker) {
                const int q = a * l.S + t2;
                const double th = v.theta(p, t2);
                const double w = 2.0 * (1.0 - SicModel::theta_of(sig2(q))) * th * th;
                res_cf += vo(p, q) + w;
                sic_cf += w;
            }
            for (int q = 0; q < v.users(); ++q)
                if (v.cluster_of(q) != a) foreign += vo(p, q);
            for (int j = 0; j < l.So; ++j) {
                const double ps = v.psi(p, j);
                I3 += ps * ps;
                if (v.paired(a))
                    bm.row(rep, detail::idx((t + ".psi").c_str(), p, j), ps,
                           [b, j, &l](const Vector& x) { return x(b + 2 * l.S + 2 + j); });
            }
            auto emp_I1 = [b, rank, k, &l](const Vector& x) {
                double s = 0.0;
                for (int tt = 0; tt < l.S; ++tt)
                    if (rank[static_cast<std::size_t>(tt)] < rank[static_cast<std::size_t>(k)]) s += x(b + tt) * x(b + tt);
                return s;
            };
            auto emp_var_sum = [b, &l](const Vector& x, const std::vector<int>& set) {
                double s = 0.0;
                for (int tt : set) s += x(b + l.S + tt) - x(b + tt) * x(b + tt);
                return s;
            };
            auto emp_I3 = [b, &l, paired = v.paired(a)](const Vector& x) {
                double s = 0.0;
                if (paired)
                    for (int j = 0; j < l.So; ++j) s += x(b + 2 * l.S + 2 + j) * x(b + 2 * l.S + 2 + j);
                return s;
            };
            bm.row(rep, detail::idx((t + ".I1").c_str(), p), I1, emp_I1);
            bm.row(rep, detail::idx((t + ".sic_residual").c_str(), p), res_cf,
                   [b, &l](const Vector& x) { return x(b + 2 * l.S + 1); });
            bm.row(rep, detail::idx((t + ".sic_excess").c_str(), p), sic_cf,
                   [b, &l, weaker, emp_var_sum](const Vector& x) { return x(b + 2 * l.S + 1) - emp_var_sum(x, weaker); });
            bm.row(rep, detail::idx((t + ".foreign").c_str(), p), foreign, [b, &l](const Vector& x) { return x(b + 2 * l.S); });
            bm.row(rep, detail::idx((t + ".I3").c_str(), p), I3, emp_I3);
            bm.row(rep, detail::idx((t + ".Z").c_str(), p), Z(p),
                   [b, &l](const Vector& x) { return x(b + 2 * l.S + 2 + l.So); });
            if (printable)
                bm.row(rep, detail::idx((t + ".Z.as_printed").c_str(), p), Z_pr(p),
                       [b, &l](const Vector& x) { return x(b + 2 * l.S + 2 + l.So); }, false);

            std::vector<int> cluster(static_cast<std::size_t>(l.S));
            for (int tt = 0; tt < l.S; ++tt) cluster[static_cast<std::size_t>(tt)] = tt;
            auto sinr = [=, &l](const Vector& x) {
                const double m = x(b + k);
                double own = emp_var_sum(x, cluster) + x(b + 2 * l.S);
                const double excess = x(b + 2 * l.S + 1) - emp_var_sum(x, weaker);
                const double den = P_own * (own + emp_I1(x) + excess) + P_oth * x(b + 2 * l.S + 2 + l.So) + 1.0;
                return P_own * m * m / den;
            };
            bm.row(rep, detail::idx((t + ".sinr").c_str(), p), gamma(p), sinr);
            if (printable) bm.row(rep, detail::idx((t + ".sinr.as_printed").c_str(), p), gamma_pr(p), sinr, false);
        }
    };
    const Vector gP = sinr_primary_noma(st, g, al, sc.order, sc.sic);
    const Vector gS = sinr_secondary_noma(st, g, al, sc.order, sc.sic);
    const Vector ZP = detail::noma_cross_side(vP, FormulaVariant::exact);
    const Vector ZS = detail::noma_cross_side(vS, FormulaVariant::exact);
    Vector gP_pr = gP, gS_pr = gS, ZP_pr = ZP, ZS_pr = ZS;
    if (printable) {
        gP_pr = sinr_primary_noma(st, g, al, sc.order, sc.sic, FormulaVariant::as_printed);
        gS_pr = sinr_secondary_noma(st, g, al, sc.order, sc.sic, FormulaVariant::as_printed);
        ZP_pr = detail::noma_cross_side(vP, FormulaVariant::as_printed);
        ZS_pr = detail::noma_cross_side(vS, FormulaVariant::as_printed);
    }
    emit("noma.pu", vP, lP, sc.order.primary, sc.sic.sigma_e2_P, al.P_P, al.P_S, gP, gP_pr, ZP, ZP_pr);
    emit("noma.su", vS, lS, sc.order.secondary, sc.sic.sigma_e2_S, al.P_S, al.P_P, gS, gS_pr, ZS, ZS_pr);
    return rep;
}

/// NOMA downlink-pilot oracle: each cluster's beamformed pilot gives every
/// member an LMMSE estimate of all intra-cluster gains mu_{p,t}. The Jensen
/// rows here are informational; users with SINR near 1e-4 have a bound gap
/// far below the sampling error.
inline MomentReport empirical_noma_dl_pilot(const NomaScenario& sc, const McOptions& opt)
{
    const auto& g = sc.gains;
    const auto& st = sc.stats;
    const auto& sh = st.shape;
    const auto& al = sc.alloc;
    const int UP = sh.A * sh.K, US = sh.B * sh.L;
    const Matrix Wp = al.eta_P.cwiseSqrt(), Ws = al.eta_S.cwiseSqrt();
    const NomaSide vP = noma_primary_side(st, g, al), vS = noma_secondary_side(st, g, al);
    const auto dl = dl_stats_noma(st, g, al, sc.Ppd);
    const auto [gP, gS] = sinr_noma_dlpilot(dl, sh, al, sc.order);
    const double pl = prelog(sc.tau_c, sc.tau_p + sc.tau_pd);
    const double sq = std::sqrt(sc.Ppd);

    struct Lay {
        int S, So, per, o;
    };
    // Per user: |mu_hat_t|^2, |mu_t - mu_hat_t|^2, |mu_t|^2 per member, sum |lambda|^2, rate sample.
    const Lay lP{sh.K, sh.L, 3 * sh.K + 2, 0};
    const Lay lS{sh.L, sh.K, 3 * sh.L + 2, lP.per * UP};
    const int total = lS.o + lS.per * US;

    detail::BatchMeans bm(total, opt);
    bm.run(0x05u, [&] {
        return [&, ch = ChannelRealization{}, nz = CMatrix{}](std::mt19937_64& rng, double* s) mutable {
            draw_channel(g, rng, ch);
            const auto e = simulate_ul_estimation_noma(ch, st, g, rng);
            const auto eff = detail::noma_effective(ch, e, Wp, Ws);
            detail::fill_cn(nz, UP + US, 1, rng);
            auto side = [&](const CMatrix& mu, const CMatrix& lam, const NomaSide& v, const NomaDlSide& d,
                            const Lay& l, const Vector& gamma, double P, int noise_off) {
                for (int p = 0; p < v.users(); ++p) {
                    const int a = v.cluster_of(p), k = p % l.S;
                    cd y_mean{0.0, 0.0}, y{0.0, 0.0};
                    for (int t = 0; t < l.S; ++t) {
                        y += mu(p, a * l.S + t);
                        y_mean += d.theta(p, t);
                    }
                    if (v.paired(a))
                        for (int j = 0; j < l.So; ++j) {
                            y += lam(p, a * l.So + j);
                            y_mean += d.psi(p, j);
                        }
                    y = sq * y + nz(noise_off + p, 0);
                    y_mean *= sq;
                    double* r = s + l.o + l.per * p;
                    cd own_hat{0.0, 0.0};
                    for (int t = 0; t < l.S; ++t) {
                        const cd x = mu(p, a * l.S + t);
                        const cd xh = d.theta(p, t) + d.omega(p, t) * (y - y_mean);
                        if (t == k) own_hat = xh;
                        r[t] = std::norm(xh);
                        r[l.S + t] = std::norm(x - xh);
                        r[2 * l.S + t] = std::norm(x);
                    }
                    r[3 * l.S] = lam.row(p).cwiseAbs2().sum();
                    const double num = d.phi_mu(p, k);
                    const double den = gamma(p) > 0.0 ? P * num / gamma(p) : 1.0;
                    r[3 * l.S + 1] = pl * std::log2(1.0 + P * std::norm(own_hat) / den);
                }
            };
            side(eff.mu_P, eff.lam_P, vP, dl.primary, lP, gP, al.P_P, 0);
            side(eff.mu_S, eff.lam_S, vS, dl.secondary, lS, gS, al.P_S, UP);
        };
    });

    MomentReport rep;
    auto emit = [&](const char* tag, const NomaSide& v, const NomaDlSide& d, const Lay& l, const Vector& gamma) {
        const std::string t(tag);
        for (int p = 0; p < v.users(); ++p) {
            const int b = l.o + l.per * p;
            for (int tt = 0; tt < l.S; ++tt) {
                bm.row(rep, detail::idx((t + ".E|mu_hat|^2").c_str(), p, tt), d.phi_mu(p, tt),
                       [b, tt](const Vector& x) { return x(b + tt); });
                bm.row(rep, detail::idx((t + ".E|mu-mu_hat|^2").c_str(), p, tt), d.err(p, tt),
                       [b, tt, &l](const Vector& x) { return x(b + l.S + tt); });
                bm.row(rep, detail::idx((t + ".E|mu|^2").c_str(), p, tt), d.varrho_mu(p, tt),
                       [b, tt, &l](const Vector& x) { return x(b + 2 * l.S + tt); });
            }
            bm.row(rep, detail::idx((t + ".E|lambda|^2").c_str(), p), d.varrho_lambda.row(p).sum(),
                   [b, &l](const Vector& x) { return x(b + 3 * l.S); });
            bm.row(rep, detail::idx((t + ".jensen").c_str(), p), pl * std::log2(1.0 + gamma(p)),
                   [b, &l](const Vector& x) { return x(b + 3 * l.S + 1); }, false, CheckKind::upper_bound);
        }
    };
    emit("noma.dl.pu", vP, dl.primary, lP, gP);
    emit("noma.dl.su", vS, dl.secondary, lS, gS);
    return rep;
}

} // namespace cfss

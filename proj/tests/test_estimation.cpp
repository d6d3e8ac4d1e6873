#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace cfss;

TEST(Pilots, PartialSharingLeavesExtraPuOrthogonal)
{
    const auto plan = assign_pilots_oma(3, 2, 2, 3);
    EXPECT_EQ(plan.pu_pilot, (std::vector<int>{0, 1, 2}));
    EXPECT_EQ(plan.su_pilot, (std::vector<int>{0, 1}));
    const std::set<int> su(plan.su_pilot.begin(), plan.su_pilot.end());
    EXPECT_EQ(su.count(plan.pu_pilot[2]), 0u);
    EXPECT_TRUE(plan.pu_shared(1));
    EXPECT_FALSE(plan.pu_shared(2));
}

TEST(Pilots, FullSharingAndOrthogonalLimit)
{
    const auto full = assign_pilots_oma(2, 2, 2, 2);
    EXPECT_EQ(full.pu_pilot, full.su_pilot);
    const auto none = assign_pilots_oma(2, 2, 0, 4);
    EXPECT_EQ(none.pu_pilot, (std::vector<int>{0, 1}));
    EXPECT_EQ(none.su_pilot, (std::vector<int>{2, 3}));
}

TEST(Pilots, RejectsBadSharingCounts)
{
    EXPECT_THROW(assign_pilots_oma(2, 2, 3, 4), InvalidArgument);
    EXPECT_THROW(assign_pilots_oma(2, 2, -1, 4), InvalidArgument);
    EXPECT_THROW(assign_pilots_oma(3, 3, 1, 4), InvalidArgument); // needs 5 pilots
}

TEST(UlStatsOma, SharedPilotHandValue)
{
    const auto g = fx::constant_gains(1, 1, 1, 1, 1.0, 1.0, 1.0, 1.0);
    const auto s = ul_stats_oma(g, assign_pilots_oma(1, 1, 1, 1), 1.0);
    EXPECT_NEAR(s.c_P(0, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.rho_f(0, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.rho_v(0, 0), 1.0 / 3.0, 1e-15);
}

TEST(UlStatsOma, NoCrossChannelHandValue)
{
    const auto g = fx::constant_gains(1, 1, 1, 1, 1.0, 1.0, 0.0, 0.0);
    const auto s = ul_stats_oma(g, assign_pilots_oma(1, 1, 1, 1), 1.0);
    EXPECT_NEAR(s.c_P(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(s.rho_f(0, 0), 0.5, 1e-15);
}

TEST(UlStatsOma, UnsharedPilotDropsCrossTerms)
{
    const auto g = fx::constant_gains(2, 2, 2, 2, 1.0, 1.0, 1.0, 1.0);
    const auto s = ul_stats_oma(g, assign_pilots_oma(2, 2, 0, 4), 1.0);
    // tau_p P = 4: c = sqrt(4) / (4 + 1).
    EXPECT_NEAR(s.c_P(0, 0), 0.4, 1e-15);
    EXPECT_TRUE(s.rho_u.isZero());
    EXPECT_TRUE(s.rho_v.isZero());
}

TEST(UlStatsOma, ZeroPilotPowerCarriesNoInformation)
{
    SystemConfig cfg;
    const auto g = compute_large_scale(generate_topology(cfg), cfg);
    const auto s = ul_stats_oma(g, assign_pilots_oma(10, 10, 10, 10), 0.0);
    EXPECT_TRUE(s.rho_f.isZero());
    EXPECT_TRUE(s.rho_g.isZero());
}

TEST(UlStatsOma, EstimateVarianceBelowChannelVarianceAndMonotone)
{
    SystemConfig cfg;
    cfg.noise_power = 1e-6;
    const auto g = compute_large_scale(generate_topology(cfg), cfg);
    const auto plan = assign_pilots_oma(10, 10, 10, 10);
    UlEstimateStats prev = ul_stats_oma(g, plan, 0.0);
    for (double p : {1e2, 1e4, 1e6, 1e8}) {
        const auto s = ul_stats_oma(g, plan, p);
        EXPECT_TRUE((s.rho_f.array() <= g.zeta_f.array()).all());
        EXPECT_TRUE((s.rho_g.array() <= g.zeta_g.array()).all());
        EXPECT_TRUE((s.rho_f.array() >= prev.rho_f.array()).all());
        EXPECT_TRUE((s.rho_g.array() >= prev.rho_g.array()).all());
        prev = s;
    }
}

TEST(UlStatsNoma, SingleUserHandValue)
{
    const auto g = fx::constant_gains(1, 1, 1, 1, 1.0, 1.0, 1.0, 1.0);
    const auto s = ul_stats_noma(g, {1, 1, 1, 1}, assign_pilots_noma(1, 1, 1, 1), 1.0);
    EXPECT_NEAR(s.alpha_f(0, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.alpha_g(0, 0), 1.0 / 3.0, 1e-15);
}

TEST(UlStatsNoma, EqualGainsGiveEqualAlphaAndPerfectLimit)
{
    const auto g = fx::constant_gains(3, 4, 3, 4, 0.7, 0.7, 0.2, 0.2);
    const auto s = ul_stats_noma(g, {2, 2, 2, 2}, assign_pilots_noma(2, 2, 2, 2), 1.0);
    EXPECT_NEAR(s.alpha_f(0, 0), s.alpha_f(0, 1), 1e-15);
    EXPECT_TRUE((s.alpha_f.array() <= g.zeta_f.array()).all());

    auto lone = fx::constant_gains(1, 1, 1, 1, 0.7, 0.7, 0.0, 0.0);
    const auto p = ul_stats_noma(lone, {1, 1, 1, 1}, assign_pilots_noma(1, 1, 0, 2), 1e9);
    EXPECT_NEAR(p.alpha_f(0, 0), 0.7, 1e-8);
}

TEST(UlStatsNoma, SingletonClustersMatchOma)
{
    SystemConfig cfg;
    cfg.noise_power = 1e-4;
    cfg.K = cfg.L = 3;
    const auto g = compute_large_scale(generate_topology(cfg), cfg);
    const auto oma = ul_stats_oma(g, assign_pilots_oma(3, 3, 3, 3), cfg.snr(0.3));
    const auto noma = ul_stats_noma(g, {3, 1, 3, 1}, assign_pilots_noma(3, 3, 3, 3), cfg.snr(0.3));
    EXPECT_LT((oma.rho_f - noma.alpha_f).cwiseAbs().maxCoeff(), 1e-12 * oma.rho_f.maxCoeff());
    EXPECT_LT((oma.rho_g - noma.alpha_g).cwiseAbs().maxCoeff(), 1e-12 * oma.rho_g.maxCoeff());
}

TEST(DlKappa, HandValueAndLimits)
{
    EXPECT_DOUBLE_EQ(dl_kappa(1.0, 0.0, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(dl_kappa(0.7, 0.3, 0.0), 0.7);
    // Large pilot power: kappa -> v u / (v + u), strictly below v when u > 0.
    const double v = 0.8, u = 0.4;
    EXPECT_NEAR(dl_kappa(v, u, 1e12), v * u / (v + u), 1e-9);
    EXPECT_LT(dl_kappa(v, u, 1e12), v);
}

TEST(DlStatsOma, KappaStaysInRangeAndHandDefinitions)
{
    const auto d = fx::desk_oma(3, 1e-4, 6, 3);
    for (double Ppd : {0.0, 1.0, 1e2, 1e4, 1e8}) {
        const auto dl = dl_stats_oma(d.stats, d.gains, d.clusters, d.alloc, Ppd);
        EXPECT_TRUE((dl.kappa_P.array() >= 0.0).all());
        EXPECT_TRUE((dl.kappa_P.array() <= dl.v_Pkk.array() * (1 + 1e-12)).all());
        EXPECT_TRUE((dl.kappa_S.array() <= dl.v_Sll.array() * (1 + 1e-12)).all());
        if (Ppd == 0.0) EXPECT_EQ(dl.kappa_P, dl.v_Pkk);
        const Vector second = dl.mean_P.cwiseAbs2() + dl.v_Pkk - dl.kappa_P;
        EXPECT_TRUE((second.array() >= 0.0).all());
    }
    const auto dl = dl_stats_oma(d.stats, d.gains, d.clusters, d.alloc, 1.0);
    const Matrix& eta = d.alloc.eta_P;
    for (int k = 0; k < 3; ++k) {
        double v = 0.0, mean = 0.0;
        for (int m = 0; m < 6; ++m) {
            v += eta(m, k) * d.gains.zeta_f(m, k) * d.stats.rho_f(m, k);
            mean += std::sqrt(eta(m, k)) * d.stats.rho_f(m, k);
        }
        EXPECT_NEAR(dl.v_Pkk(k), v, 1e-12 * v);
        EXPECT_NEAR(dl.mean_P(k), mean, 1e-12 * mean);
    }
}

TEST(DlStatsNoma, ZeroPilotPowerFallsBackToPrior)
{
    const auto sc = fx::desk_noma(2, 1.0);
    const auto dl = dl_stats_noma(sc.stats, sc.gains, sc.alloc, 0.0);
    EXPECT_TRUE(dl.primary.omega.isZero());
    EXPECT_LT((dl.primary.phi_mu - dl.primary.theta.cwiseAbs2()).cwiseAbs().maxCoeff(), 1e-300);
    EXPECT_LT((dl.secondary.phi_mu - dl.secondary.theta.cwiseAbs2()).cwiseAbs().maxCoeff(), 1e-300);
}

TEST(DlStatsNoma, SingleUserWithoutSecondaryHandValue)
{
    auto g = fx::constant_gains(1, 1, 1, 1, 0.6, 0.5, 0.0, 0.0);
    const auto s = ul_stats_noma(g, {1, 1, 1, 1}, assign_pilots_noma(1, 1, 0, 2), 2.0);
    const PowerAllocation alloc{Matrix::Constant(1, 1, 1.5), Matrix::Constant(1, 1, 1.0), 1.0, 0.0};
    const auto dl = dl_stats_noma(s, g, alloc, 1.0);
    const double a = s.alpha_f(0, 0);
    EXPECT_NEAR(dl.primary.varrho_mu(0, 0), 1.5 * a * (0.6 + a), 1e-14);
    EXPECT_NEAR(dl.primary.varrho_lambda.sum(), 0.0, 1e-300);
}

TEST(DlStatsNoma, SymmetricClustersShareTheta)
{
    auto g = fx::constant_gains(4, 4, 4, 4, 0.3, 0.3, 0.05, 0.05);
    const auto s = ul_stats_noma(g, {2, 2, 2, 2}, assign_pilots_noma(2, 2, 2, 2), 5.0);
    const auto order = order_noma_users(s);
    const auto alloc = noma_ordered_allocation(s, order, 10.0, 5.0);
    const auto dl = dl_stats_noma(s, g, alloc, 3.0);
    EXPECT_NEAR(dl.primary.theta(0, 0), dl.primary.theta(2, 0), 1e-14);
    EXPECT_NEAR(dl.primary.theta(1, 1), dl.primary.theta(3, 1), 1e-14);
}

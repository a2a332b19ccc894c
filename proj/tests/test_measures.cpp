#include "kolmo/measures.hpp"
#include "kolmo/presets.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kolmo;

namespace {

CoefficientField preset(const std::string& name, int d = 1) { return make_preset(name, {.d = d}).cf; }

Expression parse1(const std::string& s) { return Expression::parse(s, 1); }

const Point kOrigin{0.0};

/// N(mean, var) cell masses on the grid (boundary cells clipped to the box).
DiscreteMeasure gaussian_cells(const Grid& g, double t, double var, double mean = 0.0) {
    DiscreteMeasure m(g, t);
    const double h = g.h(), R = g.radius();
    for (std::size_t n = 0; n < g.size(); ++n) {
        const double x = g.coordinate(n, 0);
        m.weights[n] = oracle::normal_mass(std::max(-R, x - h / 2), std::min(R, x + h / 2), mean, var);
    }
    return m;
}

double beta_nonaut(double t) { return -(2 + std::sin(t)); }

} // namespace

TEST(MeasureBasics, MomentsAndMass) {
    const Grid g(1, 4.0, 0.05);
    const auto delta = DiscreteMeasure::point_mass(g, 0.0, kOrigin);
    EXPECT_EQ(moments(delta, 2.0), 0.0);
    EXPECT_DOUBLE_EQ(delta.total_mass(), 1.0);
    const auto n01 = gaussian_cells(g, 0.0, 1.0);
    EXPECT_NEAR(moments(n01, 2.0), 1.0, 2e-2);
    DiscreteMeasure uni(Grid(1, 1.0, 0.05), 0.0);
    for (std::size_t n = 0; n < uni.grid.size(); ++n) uni.weights[n] = uni.grid.cell_volume(n) / 2.0;
    EXPECT_NEAR(uni.total_mass(), 1.0, 1e-12);
    EXPECT_NEAR(moments(uni, 1.0), 0.5, 0.05);
    EXPECT_GT(check_lebesgue_equivalence(uni, 1.0), 0.0);
    EXPECT_EQ(check_lebesgue_equivalence(delta, 1.0), 0.0);
    EXPECT_THROW(moments(uni, 0.0), Error);
}

TEST(MeasureTimeAverage, ShortHorizonIsNearPointMass) {
    auto disc = measure_discretization();
    disc.dt = 1e-6;
    const auto mu = time_average_measure(preset("ou-autonomous"), 0.0, kOrigin, 1e-5, disc);
    EXPECT_GE(mu.weights[mu.grid.origin()], 1.0 - 5e-3);
    EXPECT_NEAR(mu.total_mass(), 1.0, 1e-12);
    EXPECT_NEAR(mu.integrate(Expression::constant(1.0, 1)), 1.0, 1e-12);
}

TEST(MeasureTimeAverage, OrnsteinUhlenbeckHorizon20) {
    const auto mu = time_average_measure(preset("ou-autonomous"), 0.0, kOrigin, 20.0);
    const auto ref = gaussian_cells(mu.grid, 0.0, 1.0);
    EXPECT_LE(total_variation(mu, ref), 5e-2);
    // the average over tau of N(0, 1 - e^{-2 tau}) masses, computed independently
    DiscreteMeasure avg(mu.grid, 0.0);
    const int q = 4000;
    for (int k = 0; k <= q; ++k) {
        const double tau = 20.0 * k / q;
        const double wk = (k == 0 || k == q ? 0.5 : 1.0) / q;
        if (tau == 0.0) {
            avg.weights[mu.grid.origin()] += wk;
            continue;
        }
        const auto g = gaussian_cells(mu.grid, 0.0, 1.0 - std::exp(-2 * tau));
        for (std::size_t n = 0; n < avg.weights.size(); ++n) avg.weights[n] += wk * g.weights[n];
    }
    EXPECT_LE(total_variation(mu, avg), 1e-2);
}

TEST(MeasureTimeAverage, QuadratureDensityIndependence) {
    const auto cf = preset("ou-nonautonomous");
    const auto a = time_average_measure(cf, 0.0, kOrigin, 20.0, measure_discretization(), 1);
    const auto b = time_average_measure(cf, 0.0, kOrigin, 20.0, measure_discretization(), 10);
    EXPECT_LE(total_variation(a, b), 2e-2);
}

TEST(MeasureAdjoint, IdentityDualityAndFlow) {
    const auto cf = preset("ou-nonautonomous");
    const auto disc = measure_discretization();
    const auto mu = gaussian_cells(Grid(1, disc.R0, disc.h), 2.0, 0.4);
    const auto same = adjoint_propagate(cf, mu, 2.0, disc);
    EXPECT_EQ(same.weights, mu.weights);

    const auto back = adjoint_propagate(cf, mu, 1.0, disc);
    EXPECT_NEAR(back.renormalization, 1.0, 1e-12);
    // duality on the same box: int G f dmu_t = int f d(G^* mu)
    const TruncatedProblem tp{cf, mu.grid, disc.bc, 1.0, 2.0, disc.dt, disc.theta};
    for (const char* f : {"sin(x1)", "exp(-x1^2)", "x1^2"}) {
        const auto gf = solve(tp, parse1(f)).back();
        EXPECT_NEAR(mu.integrate(gf), back.integrate(parse1(f)), 1e-12) << f;
    }
    // flow property
    const auto two = adjoint_propagate(cf, adjoint_propagate(cf, mu, 1.5, disc), 1.0, disc);
    EXPECT_LE(total_variation(two, back), 5e-3);
}

TEST(MeasureAdjoint, GaussianSystemPulledBack) {
    const auto cf = preset("ou-nonautonomous");
    const double t = 3.0, s = 1.0;
    const auto disc = measure_discretization();
    const Grid g(1, disc.R0, disc.h);
    const auto mt = gaussian_cells(g, t, oracle::system_variance(beta_nonaut, t));
    const auto ms = adjoint_propagate(cf, mt, s, disc);
    EXPECT_LE(total_variation(ms, gaussian_cells(g, s, oracle::system_variance(beta_nonaut, s))), 5e-2);
}

TEST(MeasureSystem, OrnsteinUhlenbeckPresets) {
    const auto aut = build_evolution_system(preset("ou-autonomous"), kOrigin, {0.0, 2.0});
    for (const auto& mu : aut.anchors()) {
        EXPECT_LE(total_variation(mu, gaussian_cells(mu.grid, mu.time, 1.0)), 5e-2);
        EXPECT_NEAR(moments(mu, 2.0), 1.0, 2e-2);
    }
    EXPECT_LE(total_variation(aut.anchors()[0], aut.anchors()[1]), 1e-10);
    for (double tv : aut.cauchy_tv()) EXPECT_LE(tv, 1e-2);

    const auto cf = preset("ou-nonautonomous");
    const auto sys = build_evolution_system(cf, kOrigin, {0.0, 2.0, 4.0});
    for (double s : {0.0, 1.0, 2.0, 3.3, 4.0}) {
        const auto mu = sys.at(s);
        EXPECT_LE(total_variation(mu, gaussian_cells(mu.grid, s, oracle::system_variance(beta_nonaut, s))), 5e-2) << s;
        EXPECT_GT(check_lebesgue_equivalence(mu, 4.0), 0.0);
    }
    EXPECT_THROW(sys.at(5.0), Error);

    // uniqueness class: another starting point gives the same system
    SystemSettings longer;
    longer.horizons.push_back(80.0);
    const auto other = build_evolution_system(cf, Point{1.5}, {0.0, 2.0, 4.0}, longer);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(total_variation(sys.anchors()[k], other.anchors()[k]), 2e-2);
}

TEST(MeasureSystem, InvarianceResidual) {
    const auto sys = build_evolution_system(preset("ou-nonautonomous"), kOrigin, {0.0, 1.0, 2.0});
    std::vector<Expression> corpus{Expression::constant(1.0, 1), parse1("x1^2"), parse1("sin(x1)"), parse1("exp(-x1^2)"),
                                   parse1("1/(1+exp(-4*x1))")};
    const auto rep = invariance_residual(sys, corpus, {{1.0, 0.0}, {2.0, 0.5}, {2.0, 2.0}});
    for (const auto& r : rep.rows) {
        EXPECT_LE(r.residual, 1e-2) << r.f << ' ' << r.t << ' ' << r.s;
        if (r.f == 0) EXPECT_LE(r.residual, 2e-3);
        if (r.t == r.s) EXPECT_EQ(r.residual, 0.0);
    }
}

TEST(MeasureSystem, NotCauchyThrows) {
    SystemSettings cfg;
    cfg.horizons = {0.5, 1.0};
    EXPECT_THROW(build_evolution_system(preset("ou-autonomous"), kOrigin, {0.0}, cfg), BudgetExceeded);
}

TEST(MeasureTightness, Tables) {
    const Grid g(1, 8.0, 0.05);
    const auto delta = DiscreteMeasure::point_mass(g, 0.0, kOrigin);
    const auto t0 = tightness_diagnostic({delta}, {0.5, 1.0});
    for (double m : t0.mass_outside) EXPECT_EQ(m, 0.0);

    const auto sys = build_evolution_system(preset("ou-nonautonomous"), kOrigin, {10.0});
    std::vector<DiscreteMeasure> family;
    for (double s : {0.0, 2.5, 5.0, 7.5, 10.0}) family.push_back(sys.at(s));
    const auto tab = tightness_diagnostic(family, {1.0, 2.0, 3.0, 4.0});
    EXPECT_LE(tab.mass_outside.back(), 1e-3);
    EXPECT_TRUE(tab.decays);
    for (std::size_t k = 1; k < tab.rho.size(); ++k) EXPECT_LE(tab.mass_outside[k], tab.mass_outside[k - 1]);

    // expanding drift pushes the average to the box edge
    const auto esc = time_average_measure(preset("expanding"), 0.0, Point{0.5}, 3.0);
    EXPECT_FALSE(tightness_diagnostic({esc}, {1.0, 2.0, 4.0}).decays);
}

TEST(MeasureAsymptotics, OrnsteinUhlenbeckSine) {
    const auto cf = preset("ou-autonomous");
    const auto sys = build_evolution_system(cf, kOrigin, {0.0});
    const auto& mu = sys.anchors()[0];
    const std::vector<double> taus{2.0, 3.0, 4.0, 5.0, 6.0};
    const auto r4 = check_asymptotics(cf, mu, parse1("sin(x1)"), taus, 4.0, -1.0);
    EXPECT_EQ(r4.outcome, Outcome::Pass) << r4.rate;
    EXPECT_NEAR(r4.rate, -1.0, 0.15);
    const auto r2 = check_asymptotics(cf, mu, parse1("sin(x1)"), taus, 2.0, -1.0);
    EXPECT_TRUE(r2.decays);
    EXPECT_GT(r4.C, r2.C);
    EXPECT_NEAR(r2.rate, r4.rate, 0.15);
    const auto one = check_asymptotics(cf, mu, Expression::constant(1.0, 1), taus, 4.0, -1.0);
    for (double v : one.residual) EXPECT_LE(v, 2e-3);
    EXPECT_EQ(check_asymptotics(cf, mu, parse1("sin(x1)"), taus, 4.0, 0.0).outcome, Outcome::NotApplicable);
}

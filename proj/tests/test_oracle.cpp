#include "kolmo/oracle.hpp"
#include "kolmo/presets.hpp"
#include "oracles.hpp"

#include <boost/numeric/odeint.hpp>
#include <gtest/gtest.h>

#include <cmath>

using namespace kolmo;

namespace {

CoefficientField preset(const std::string& name, int d = 1) { return make_preset(name, {.d = d}).cf; }

Expression parse1(const std::string& s) { return Expression::parse(s, 1); }

double beta_nonaut(double t) { return -(2 + std::sin(t)); }

OracleSettings settings(std::size_t N, double dt = 1e-3, std::uint64_t seed = 7) {
    OracleSettings c;
    c.N = N;
    c.dt_mc = dt;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Philox, KnownAnswerVectors) {
    using C = Philox4x32::Counter;
    EXPECT_EQ(Philox4x32::generate({0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(Philox4x32::generate({~0u, ~0u, ~0u, ~0u}, {~0u, ~0u}),
              (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(Philox4x32::generate({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
              (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, NormalPairsAreStandard) {
    const int n = 200000;
    double m = 0.0, v = 0.0, c = 0.0;
    for (int i = 0; i < n / 2; ++i) {
        const auto g = detail::normal_pair(3, 5, static_cast<std::uint64_t>(i), 0);
        m += g[0] + g[1];
        v += g[0] * g[0] + g[1] * g[1];
        c += g[0] * g[1];
    }
    m /= n;
    v /= n;
    c /= n / 2;
    EXPECT_NEAR(m, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(v, 1.0, 4.0 * std::sqrt(2.0 / n));
    EXPECT_NEAR(c, 0.0, 4.0 / std::sqrt(n / 2));
}

TEST(Simulate, HeatVariance) {
    for (int d : {1, 2}) {
        const auto ens = simulate(preset("heat", d), 0.0, Point(static_cast<std::size_t>(d), 0.0), 0.5, settings(40000, 1e-2));
        for (int a = 0; a < d; ++a) {
            double v = 0.0;
            for (double x : ens.X[static_cast<std::size_t>(a)]) v += x * x;
            v /= static_cast<double>(ens.size());
            const double se = 1.0 * std::sqrt(2.0 / static_cast<double>(ens.size()));
            EXPECT_NEAR(v, 1.0, 3.0 * se) << d << ' ' << a;
        }
    }
}

TEST(Simulate, LinearMeanAndVariance) {
    const auto cf = preset("ou-nonautonomous");
    const double s = 0.3, t = 1.3, x = 1.5;
    const auto ens = simulate(cf, s, {x}, t, settings(50000, 1e-3));
    const auto lin = oracle::linear(beta_nonaut, s, t);
    const auto mean = feynman_kac(ens, parse1("x1"));
    EXPECT_NEAR(mean.estimate, lin.m * x, 3.0 * mean.se);
    const auto sq = feynman_kac(ens, parse1("x1^2"));
    EXPECT_NEAR(sq.estimate, lin.V + lin.m * lin.m * x * x, 3.0 * sq.se + 2e-3);
}

TEST(Simulate, DeterministicModeMatchesOdeSolvers) {
    auto cfg = settings(1, 1e-6);
    cfg.diffusion = false;
    const auto lin = simulate(preset("ou-nonautonomous"), 0.0, {1.0}, 1.0, cfg);
    EXPECT_NEAR(lin.X[0][0], oracle::linear(beta_nonaut, 0.0, 1.0).m, 1e-6);

    // nonlinear time-dependent drift, clock reversed: dy/dr = b(1 - r, y)
    const auto cf = CoefficientField::parse(1, {"1"}, {"-(1+0.5*sin(t))*x1^3 + cos(t)"});
    const auto em = simulate(cf, 0.0, {0.8}, 1.0, cfg);
    using State = std::array<double, 1>;
    State y{0.8};
    boost::numeric::odeint::integrate_adaptive(
        boost::numeric::odeint::make_controlled<boost::numeric::odeint::runge_kutta_dopri5<State>>(1e-12, 1e-12),
        [](const State& u, State& du, double r) {
            const double tau = 1.0 - r;
            du[0] = -(1 + 0.5 * std::sin(tau)) * u[0] * u[0] * u[0] + std::cos(tau);
        },
        y, 0.0, 1.0, 1e-3);
    EXPECT_NEAR(em.X[0][0], y[0], 1e-6);
}

TEST(Simulate, SeedDeterminismAcrossWorkers) {
    const auto cf = preset("ou-nonautonomous", 2);
    auto c1 = settings(10000, 1e-2, 11);
    c1.chunk = 1000;
    auto c3 = c1;
    c3.workers = 3;
    const auto a = simulate(cf, 0.0, {0.5, -0.5}, 1.0, c1);
    const auto b = simulate(cf, 0.0, {0.5, -0.5}, 1.0, c3);
    const auto c = simulate(cf, 0.0, {0.5, -0.5}, 1.0, c1);
    EXPECT_EQ(a.X, b.X);
    EXPECT_EQ(a.X, c.X);
    const auto other = simulate(cf, 0.0, {0.5, -0.5}, 1.0, settings(10000, 1e-2, 12));
    EXPECT_NE(a.X, other.X);
    EXPECT_EQ(feynman_kac(a, Expression::parse("x1*x2", 2)).estimate, feynman_kac(b, Expression::parse("x1*x2", 2)).estimate);
}

TEST(Simulate, StateDependentDiffusionAndErrors) {
    // Q = 1 + x^2/2 with zero drift keeps the mean; second moment grows like
    // d/dt E x^2 = 2 E Q = 2 + E x^2
    const auto cf = CoefficientField::parse(1, {"1 + x1^2/2"}, {"0"});
    const auto ens = simulate(cf, 0.0, {0.0}, 0.5, settings(40000, 1e-3));
    const auto m = feynman_kac(ens, parse1("x1"));
    EXPECT_NEAR(m.estimate, 0.0, 3.0 * m.se);
    const auto sq = feynman_kac(ens, parse1("x1^2"));
    EXPECT_NEAR(sq.estimate, 2.0 * (std::exp(0.5) - 1.0), 3.0 * sq.se + 5e-3);

    const auto bad = CoefficientField::parse(1, {"-1"}, {"0"});
    EXPECT_THROW(simulate(bad, 0.0, {0.0}, 0.1, settings(10)), NumericalError);
    const auto bad2 = CoefficientField::parse(2, {"1", "2", "1"}, {"0", "0"});
    EXPECT_THROW(simulate(bad2, 0.0, {0.0, 0.0}, 0.1, settings(10)), NumericalError);
    EXPECT_THROW(simulate(preset("heat"), 1.0, {0.0}, 0.5, settings(10)), Error);
}

TEST(Simulate, DriftTamingIsCounted) {
    auto cfg = settings(2000, 1e-2);
    cfg.drift_clip = 2.0;
    const auto ens = simulate(preset("expanding"), 0.0, {1.0}, 2.0, cfg);
    EXPECT_GT(ens.clip_count, 0u);
    cfg.drift_clip = 1e4;
    EXPECT_EQ(simulate(preset("ou-autonomous"), 0.0, {1.0}, 1.0, cfg).clip_count, 0u);
}

TEST(FeynmanKac, ClosedForms) {
    const auto one = feynman_kac(simulate(preset("ou-autonomous"), 0.0, {0.3}, 1.0, settings(5000)), Expression::constant(1.0, 1));
    EXPECT_EQ(one.estimate, 1.0);
    EXPECT_EQ(one.se, 0.0);

    const auto ou = feynman_kac(simulate(preset("ou-autonomous"), 0.0, {1.0}, 1.0, settings(50000)), parse1("x1"));
    EXPECT_NEAR(ou.estimate, std::exp(-1.0), 3.0 * ou.se + 2e-4);

    const auto heat = feynman_kac(simulate(preset("heat"), 0.0, {0.0}, 0.5, settings(50000, 1e-2)), half_space_indicator(1));
    EXPECT_NEAR(heat.estimate, 0.5, 3.0 * heat.se);
}

TEST(FeynmanKac, WeakOrderOne) {
    const double order = weak_error_order(preset("ou-autonomous"), parse1("x1"), 0.0, {10.0}, 1.0,
                                          {0.2, 0.1, 0.05, 0.025}, settings(100000));
    EXPECT_GE(order, 0.7);
    EXPECT_LE(order, 1.3);
}

TEST(EnsembleMeasure, Histograms) {
    const Grid g(1, 8.0, 0.05);
    const auto point = ensemble_measure(simulate(preset("ou-autonomous"), 0.0, {0.5}, 0.0, settings(100)), g, 0.0);
    EXPECT_EQ(point.weights[g.nearest(Point{0.5})], 1.0);

    const auto ens = simulate(preset("ou-autonomous"), 0.0, {0.0}, 20.0, settings(100000, 1e-2));
    const auto hist = ensemble_measure(ens, g, 0.0);
    EXPECT_NEAR(hist.total_mass(), 1.0, 1e-12);
    const auto mean = feynman_kac(ens, parse1("x1"));
    EXPECT_NEAR(mean.estimate, 0.0, 3.0 * mean.se);
    const auto sys = build_evolution_system(preset("ou-autonomous"), {0.0}, {0.0});
    EXPECT_LE(total_variation(hist, sys.anchors()[0]), 7e-2);

    const Grid small(1, 0.5, 0.05);
    EXPECT_THROW(ensemble_measure(ens, small, 0.0), Error);
}

TEST(CrossCheck, AgreementAndNegativeControl) {
    const auto disc = Discretization{};
    auto cfg = settings(40000);
    std::vector<OracleProbe> probes{
        {"heat-one", preset("heat"), Expression::constant(1.0, 1), 0.0, 0.5, {0.3}},
        {"heat-sin4", preset("heat"), parse1("sin(4*x1)"), 0.0, 0.1, {0.4}},
        {"ou-gauss", preset("ou-autonomous"), parse1("exp(-x1^2)"), 0.0, 0.5, {0.5}},
        {"ou-nonaut-x2", preset("ou-nonautonomous"), parse1("x1^2"), 0.2, 0.7, {1.0}},
    };
    const auto rep = cross_check(probes, disc, cfg);
    for (const auto& r : rep.rows) EXPECT_TRUE(r.pass) << r.label << ' ' << r.pde << ' ' << r.mc << ' ' << r.bound;
    EXPECT_TRUE(rep.all_pass());
    EXPECT_NEAR(rep.rows[0].pde, 1.0, disc.eps_cons);
    EXPECT_EQ(rep.rows[0].mc, 1.0);

    auto coarse = disc;
    coarse.h = 0.4;
    const auto neg = cross_check({probes[1]}, coarse, cfg);
    EXPECT_FALSE(neg.all_pass()) << neg.rows[0].pde << ' ' << neg.rows[0].mc;
    EXPECT_DOUBLE_EQ(neg.pass_rate(), 0.0);
}

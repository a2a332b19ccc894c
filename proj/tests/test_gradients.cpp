#include "kolmo/gradients.hpp"
#include "kolmo/presets.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kolmo;

namespace {

CoefficientField preset(const std::string& name, int d = 1) { return make_preset(name, {.d = d}).cf; }

Expression parse1(const std::string& s) { return Expression::parse(s, 1); }

Discretization fine() {
    Discretization d;
    d.h = 0.025;
    return d;
}

} // namespace

TEST(DiscreteGradient, Examples) {
    for (int d = 1; d <= 2; ++d) {
        const Grid g(d, 1.0, 0.1);
        const auto c = discrete_gradient(sample(Expression::constant(3.0, d), g, 0.0));
        for (const auto& comp : c)
            for (double v : comp.values) EXPECT_EQ(v, 0.0);
        const auto lin = discrete_gradient(sample(Expression::coord(0, d), g, 0.0));
        for (std::size_t n = 0; n < g.size(); ++n) {
            EXPECT_NEAR(lin[0].values[n], 1.0, 1e-12);
            if (d == 2) EXPECT_EQ(lin[1].values[n], 0.0);
        }
        const auto sq = discrete_gradient(sample(expr::pow(Expression::coord(0, d), 2), g, 0.0));
        EXPECT_EQ(sq[0].values[g.origin()], 0.0);
    }
}

TEST(DiscreteGradient, SecondOrderInterior) {
    double err[2];
    for (int k = 0; k < 2; ++k) {
        const Grid g(1, 2.0, k == 0 ? 0.1 : 0.05);
        const auto d = discrete_gradient(sample(parse1("sin(2*x1)"), g, 0.0));
        err[k] = 0.0;
        for (std::size_t n : g.nodes_within(1.5))
            err[k] = std::max(err[k], std::abs(d[0].values[n] - 2 * std::cos(2 * g.coordinate(n, 0))));
    }
    EXPECT_NEAR(err[0] / err[1], 4.0, 0.2);
}

TEST(GradientSmoothing, HeatIndicatorSlope) {
    const auto r = verify_smoothing_rate(preset("heat"), 0.0, half_space_indicator(1), fine());
    ASSERT_EQ(r.tau.size(), 4u);
    EXPECT_NEAR(r.slope, -0.5, 0.05);
    EXPECT_EQ(r.bound.outcome, Outcome::Pass);
    // exact constant: sup gradient (4 pi tau)^{-1/2}
    EXPECT_NEAR(r.sup_grad.front(), 1.0 / std::sqrt(4 * M_PI * 0.25), 5e-3);
}

TEST(GradientSmoothing, OrnsteinUhlenbeckAndSmoothData) {
    for (const char* name : {"ou-autonomous", "ou-nonautonomous"}) {
        const auto r = verify_smoothing_rate(preset(name), 0.0, half_space_indicator(1), fine());
        EXPECT_GE(r.slope, -0.6) << name;
        EXPECT_LE(r.slope, -0.4) << name;
    }
    // smooth data: no blow-up, and the gradient stays below sup|f'|
    const auto smooth = verify_smoothing_rate(preset("heat"), 0.0, parse1("sin(x1)"));
    EXPECT_GE(smooth.slope, -0.1);
    for (double g : smooth.sup_grad) EXPECT_LE(g, 1.0 + 1e-9);
    const auto flat = verify_smoothing_rate(preset("ou-autonomous"), 0.0, Expression::constant(2.0, 1));
    EXPECT_EQ(flat.bound.outcome, Outcome::Inconclusive);
}

TEST(GradientPointwise, OrnsteinUhlenbeckSharpForP1) {
    // f' > 0 everywhere, so |grad G f| = e^{-tau} G|f'| exactly
    const auto r = verify_pointwise(preset("ou-autonomous"), 0.0, 1.0, 1.0, -1.0, parse1("x1/sqrt(1+x1^2)"));
    EXPECT_GE(r.min_margin, -1e-3);
    EXPECT_LE(r.relative_gap, 5e-3);
    const auto sine = verify_pointwise(preset("ou-autonomous"), 0.0, 1.0, 1.0, -1.0, parse1("sin(x1)"));
    EXPECT_GE(sine.min_margin, -1e-3 * sine.scale);
}

TEST(GradientPointwise, ConstantAndHeatP2) {
    const auto c = verify_pointwise(preset("heat"), 0.0, 0.5, 2.0, 0.0, Expression::constant(1.0, 1));
    EXPECT_NEAR(c.min_margin, 0.0, 1e-12);
    for (const char* f : {"sin(x1)", "exp(-x1^2)", "1/(1+exp(-4*x1))"}) {
        const auto r = verify_pointwise(preset("heat"), 0.0, 0.5, 2.0, 0.0, parse1(f));
        EXPECT_EQ(r.bound.outcome, Outcome::Pass) << f << " margin " << r.min_margin;
    }
}

TEST(GradientPointwise, TwoDimensionsP4) {
    Discretization disc;
    disc.R0 = 4;
    disc.K = 2;
    disc.h = 0.1;
    disc.dt = 5e-3;
    const auto r = verify_pointwise(preset("ou-nonautonomous", 2), 0.0, 0.5, 4.0, -4.0,
                                    Expression::parse("exp(-(x1-0.5)^2-x2^2)", 2), disc);
    EXPECT_EQ(r.bound.outcome, Outcome::Pass) << r.min_margin;
}

TEST(GradientDecay, NonautonomousRate) {
    const auto r = verify_exponential_decay(preset("ou-nonautonomous"), 0.0, parse1("sin(x1)"), {1.0, 1.5, 2.0, 2.5, 3.0},
                                            1.0, -1.0);
    EXPECT_EQ(r.bound.outcome, Outcome::Pass) << r.rate;
    // sup |grad G f| = m e^{-V/2} with m = exp(int beta)
    const auto l = oracle::linear([](double t) { return -(2 + std::sin(t)); }, 0.0, 2.0);
    EXPECT_NEAR(r.sup_grad[2], l.m * std::exp(-0.5 * l.V), 1e-4);
    const auto ou = verify_exponential_decay(preset("ou-autonomous"), 0.0, parse1("sin(x1)"), {1.0, 2.0, 3.0}, 1.0, -1.0);
    // log sup|grad G sin| = -tau - (1 - e^{-2 tau})/2
    std::vector<double> lt{1.0, 2.0, 3.0}, ly;
    for (double t : lt) ly.push_back(-t - 0.5 * (1 - std::exp(-2 * t)));
    EXPECT_NEAR(ou.rate, fit_line(lt, ly).first, 1e-3);
    EXPECT_EQ(ou.bound.outcome, Outcome::Pass);
    EXPECT_EQ(verify_exponential_decay(preset("heat"), 0.0, parse1("sin(x1)"), {1.0, 2.0}, 1.0, 0.0).bound.outcome,
              Outcome::NotApplicable);
    EXPECT_EQ(verify_exponential_decay(preset("ou-autonomous"), 0.0, Expression::constant(1.0, 1), {1.0, 2.0}, 1.0, -1.0)
                  .bound.outcome,
              Outcome::Inconclusive);
}

TEST(GradientContinuity, AtInitialTime) {
    const std::vector<double> deltas{1e-1, 1e-2, 1e-3};
    const auto lin = verify_gradient_continuity_at_s(preset("ou-autonomous"), 0.0, parse1("x1"), deltas);
    for (std::size_t k = 0; k < deltas.size(); ++k) EXPECT_NEAR(lin.oscillation[k], 1 - std::exp(-deltas[k]), 1e-6);
    const auto c = verify_gradient_continuity_at_s(preset("ou-autonomous"), 0.0, Expression::constant(1.0, 1), deltas);
    for (double o : c.oscillation) EXPECT_LE(o, 1e-12);
    const auto step = verify_gradient_continuity_at_s(preset("ou-nonautonomous"), 0.0, parse1("1/(1+exp(-4*x1))"), deltas);
    EXPECT_TRUE(step.decreasing);
}

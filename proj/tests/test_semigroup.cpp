#include "kolmo/presets.hpp"
#include "kolmo/semigroup.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kolmo;

namespace {

CoefficientField preset(const std::string& name) { return make_preset(name, {}).cf; }

Expression parse1(const std::string& s) { return Expression::parse(s, 1); }

const Discretization kDisc = measure_discretization();
const Grid kGrid(1, kDisc.R0, kDisc.h);
constexpr double kDs = 0.05;

SpaceTimeField field(const std::string& f, double a = 0.0, double b = 3.0) {
    return SpaceTimeField::sample(parse1(f), kGrid, a, b, kDs);
}

double beta_nonaut(double t) { return -(2 + std::sin(t)); }

/// nu for the nonautonomous preset on [0, 4], shared across tests.
const SpaceTimeMeasure& nonaut_nu() {
    static const SpaceTimeMeasure nu = build_space_time_measure(preset("ou-nonautonomous"), Point{0.0}, 0.0, 4.0, kDs);
    return nu;
}

// time bump centred at 1.5, below 1e-7 of its peak outside [0.3, 2.7]
const std::string kBump = "exp(-((t-1.5)/0.3)^2)";

} // namespace

TEST(SemigroupApply, TranslationOfSpaceConstants) {
    const auto f = field("sin(3*t) + 2");
    for (double t : {0.05, 0.5, 1.25}) {
        const auto Tf = apply_T(preset("ou-nonautonomous"), t, f);
        const std::size_t k = f.size() - Tf.size();
        EXPECT_DOUBLE_EQ(Tf.a, t);
        for (std::size_t j = 0; j < Tf.size(); ++j) EXPECT_EQ(Tf.slices[j].values, f.slices[j].values);
        EXPECT_EQ(k, static_cast<std::size_t>(std::lround(t / kDs)));
    }
}

TEST(SemigroupApply, IdentityAndErrors) {
    const auto cf = preset("ou-autonomous");
    const auto f = field("t*x1");
    const auto T0 = apply_T(cf, 0.0, f);
    ASSERT_EQ(T0.size(), f.size());
    for (std::size_t j = 0; j < f.size(); ++j) EXPECT_EQ(T0.slices[j].values, f.slices[j].values);
    EXPECT_THROW(apply_T(cf, 0.033, f), Error);
    EXPECT_THROW(apply_T(cf, 3.05, f), Error);
    EXPECT_EQ(apply_T(cf, 3.0, f).size(), 1u);
    EXPECT_THROW(apply_T(cf, -0.05, f), Error);
}

TEST(SemigroupApply, MatchesEvolutionOperatorForTimeConstantData) {
    const auto cf = preset("ou-autonomous");
    const auto f = field("x1^2", 0.0, 1.0);
    const auto Tf = apply_T(cf, 0.5, f);
    for (std::size_t j = 0; j < Tf.size(); j += 5) {
        const double s = Tf.time(j);
        const auto ref = EvolutionOperator(cf, s - 0.5, s, kDisc).apply(parse1("x1^2"));
        EXPECT_LE(sup_diff_within(restrict_to_box(Tf.slices[j], kDisc.K), ref, kDisc.K), 1e-9);
    }
}

TEST(SemigroupApply, ClosedFormLinearData) {
    // G(s,r) x = exp(int_r^s beta) x
    const auto cf = preset("ou-nonautonomous");
    const auto f = field("sin(t)*x1");
    const double t = 0.75;
    const auto Tf = apply_T(cf, t, f, kDisc, 2);
    double err = 0.0;
    for (std::size_t j = 0; j < Tf.size(); ++j) {
        const double s = Tf.time(j);
        const double m = oracle::linear(beta_nonaut, s - t, s).m;
        for (std::size_t n : kGrid.nodes_within(kDisc.K))
            err = std::max(err, std::abs(Tf.slices[j].values[n] - std::sin(s - t) * m * kGrid.coordinate(n, 0)));
    }
    EXPECT_LE(err, 5e-3);
}

TEST(SemigroupLaw, Residuals) {
    const auto cf = preset("ou-autonomous");
    const auto f = field("sin(t)*x1");
    EXPECT_LE(check_semigroup_law(cf, f, 0.5, 0.75, kDisc.K), 5e-3);
    EXPECT_LE(check_semigroup_law(cf, f, 0.0, 0.75, kDisc.K), 1e-12);
    EXPECT_EQ(check_semigroup_law(cf, field("cos(t)"), 0.25, 0.5, kDisc.K), 0.0);
    const auto g = field("exp(-(x1-t)^2)");
    EXPECT_LE(check_semigroup_law(preset("ou-nonautonomous"), g, 0.3, 0.45, kDisc.K), 5e-3);
}

TEST(SemigroupProperties, PositivityAndSupContraction) {
    const auto cf = preset("ou-nonautonomous");
    for (const auto& tf : standard_corpus(1)) {
        if (!tf.bounded) continue;
        const auto f = SpaceTimeField::sample(tf.f * parse1("cos(t)^2"), kGrid, 0.0, 1.5, kDs);
        const auto Tf = apply_T(cf, 0.5, f);
        EXPECT_LE(Tf.sup(), f.sup() + 1e-9) << tf.name;
        if (tf.nonnegative) EXPECT_GE(Tf.min(), -1e-9) << tf.name;
    }
}

TEST(SpaceTimeMeasureTest, IntegralsOfSimpleFields) {
    const auto& nu = nonaut_nu();
    EXPECT_EQ(nu.size(), 81u);
    EXPECT_NEAR(nu_integral(field("1", 0.5, 3.5), nu), 3.0, 3.0 * 1e-3);
    EXPECT_NEAR(nu.mass(0.5, 3.5), 3.0, 3.0 * 1e-3);
    EXPECT_NEAR(nu_integral(field("x1", 0.0, 4.0), nu), 0.0, 1e-10);
    EXPECT_NEAR(nu_integral(field("sin(t)*x1^3", 0.0, 4.0), nu), 0.0, 1e-10);

    const double J = 3.0;
    const double exact = oracle::integrate([](double s) { return oracle::system_variance(beta_nonaut, s); }, 0.5, 3.5);
    EXPECT_NEAR(nu_integral(field("x1^2", 0.5, 3.5), nu), exact, 2e-2 * J);

    const auto aut = build_space_time_measure(preset("ou-autonomous"), Point{0.0}, 0.0, 1.0, kDs);
    EXPECT_NEAR(nu_integral(field("x1^2", 0.0, 1.0), aut), 1.0, 2e-2);
}

TEST(SpaceTimeMeasureTest, TInvariance) {
    const auto cf = preset("ou-nonautonomous");
    const auto& nu = nonaut_nu();

    // constant c on [0, 2.5], zero afterwards
    const double c = 1.7;
    auto box = field("0", 0.0, 4.0);
    for (std::size_t j = 0; box.time(j) <= 2.5 + 1e-12; ++j) std::fill(box.slices[j].values.begin(), box.slices[j].values.end(), c);
    EXPECT_LE(check_T_invariance(cf, box, 1.0, nu).residual, 2 * c * kDs + 1e-12);

    const auto phi = field(kBump + "*x1^2", 0.0, 4.0);
    for (double t : {0.25, 1.0}) {
        const auto r = check_T_invariance(cf, phi, t, nu);
        EXPECT_TRUE(r.pass) << t << ' ' << r.residual << ' ' << r.tol;
    }
    const auto bump = field(kBump + "*exp(-(x1-1)^2)", 0.0, 4.0);
    const auto rb = check_T_invariance(cf, bump, 0.5, nu);
    EXPECT_TRUE(rb.pass) << rb.residual;
    EXPECT_EQ(check_T_invariance(cf, phi, 0.0, nu).residual, 0.0);
}

TEST(SpaceTimeMeasureTest, InfinitesimalInvariance) {
    const auto cf = preset("ou-nonautonomous");
    const auto& nu = nonaut_nu();
    const auto flat = infinitesimal_invariance_residual(cf, parse1(kBump), nu);
    EXPECT_LE(std::abs(flat.integral), 1e-6);
    for (const std::string sp : {"exp(-x1^2)", "exp(-2*(x1-0.5)^2)", "x1^2*exp(-x1^2)"}) {
        const auto r = infinitesimal_invariance_residual(cf, parse1(kBump + "*" + sp), nu);
        EXPECT_TRUE(r.pass) << sp << ' ' << r.integral << ' ' << r.tol;
    }
    EXPECT_EQ(infinitesimal_invariance_residual(cf, parse1("0"), nu).integral, 0.0);
    EXPECT_THROW(infinitesimal_invariance_residual(cf, parse1("exp(-x1^2)"), nu), Error);
}

TEST(SpaceTimeMeasureTest, LpContraction) {
    const auto cf = preset("ou-nonautonomous");
    const auto& nu = nonaut_nu();
    for (double p : {1.0, 2.0}) {
        const auto c = check_Lp_contraction(cf, field(kBump, 0.0, 4.0), 0.5, p, nu);
        EXPECT_LE(c.ratio, 1.0 + 1e-3) << p;
        const auto lin = check_Lp_contraction(cf, field(kBump + "*x1", 0.0, 4.0), 0.5, p, nu);
        EXPECT_LT(lin.ratio, 1.0) << p;
        // the mean contraction factor exp(int beta) caps the ratio from above
        EXPECT_LE(lin.ratio, std::exp(-0.5) + 1e-2) << p;
        const auto ind = check_Lp_contraction(cf, field(kBump + "/(1+exp(-4*x1))", 0.0, 4.0), 0.5, p, nu);
        EXPECT_TRUE(ind.pass) << p << ' ' << ind.ratio;
    }
    EXPECT_THROW(check_Lp_contraction(cf, field("0", 0.0, 4.0), 0.5, 2.0, nu), Error);
}

TEST(SpaceTimeMeasureTest, StrongContinuitySurrogate) {
    const auto cf = preset("ou-nonautonomous");
    const auto& nu = nonaut_nu();
    const auto d = strong_continuity(cf, field(kBump + "*sin(x1)", 0.0, 4.0), {0.4, 0.2, 0.1, 0.05}, 2.0, nu);
    for (std::size_t k = 1; k < d.size(); ++k) EXPECT_LT(d[k], d[k - 1]);
    // first order in delta once delta is small against the time bump width
    EXPECT_LE(d[3] / d[2], 0.6);
    EXPECT_LT(d.back(), 0.3 * d.front());
}

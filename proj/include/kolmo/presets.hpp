#pragma once

/**
 * @file presets.hpp
 * @brief Named problems (coefficients plus Lyapunov data) and the combined
 *        hypothesis report.
 */

#include "kolmo/problem.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kolmo {

/// A problem ready for the numerical layers: coefficients plus Lyapunov data.
struct ProblemSpec {
    std::string name = "custom";
    CoefficientField cf;
    Expression phi;                           ///< Lyapunov function
    std::optional<LinearDriftFamily> family;  ///< set for drift-family problems
    std::optional<double> a, c;               ///< user H4 constants
    double t0 = 0.0;
    double p0 = 2.0;

    int dim() const { return cf.dim(); }
};

struct PresetOptions {
    int d = 1;
    int N = 1;                       ///< drift family: phi = 1 + |x|^{2N}
    std::string C = "-2+sin(t)";     ///< drift family: C(t)
    std::vector<std::string> b0;     ///< drift family: b(t,0), default 0
    TimeInterval interval{};
};

inline std::vector<std::string> preset_names() {
    return {"heat", "ou-autonomous", "ou-nonautonomous", "sec7", "expanding"};
}

inline ProblemSpec make_preset(const std::string& name, const PresetOptions& opt = {}) {
    const int d = opt.d;
    if (d < 1 || d > 3) throw ConfigError("preset dimension must be 1..3");
    std::vector<Expression> q;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) q.push_back(Expression::constant(i == j ? 1.0 : 0.0, d));
    auto linear = [&](const Expression& beta) {
        std::vector<Expression> b;
        for (int i = 0; i < d; ++i) b.push_back(beta * Expression::coord(i, d));
        return b;
    };

    ProblemSpec p;
    p.name = name;
    p.phi = 1.0 + expr::abs2(d);
    if (name == "heat") {
        p.cf = CoefficientField(d, q, linear(Expression::constant(0.0, d)), opt.interval);
    } else if (name == "ou-autonomous") {
        p.cf = CoefficientField(d, q, linear(Expression::constant(-1.0, d)), opt.interval);
    } else if (name == "ou-nonautonomous") {
        p.cf = CoefficientField(d, q, linear(-(2.0 + expr::sin(Expression::time(d)))), opt.interval);
    } else if (name == "expanding") {
        p.cf = CoefficientField(d, q, linear(Expression::constant(1.0, d)), opt.interval);
    } else if (name == "sec7") {
        if (opt.N < 1) throw ConfigError("sec7 needs N >= 1");
        LinearDriftFamily fam;
        fam.d = d;
        fam.N = opt.N;
        fam.C = Expression::parse(opt.C, d);
        if (fam.C.depends_on_space()) throw ConfigError("C(t) must not depend on x");
        if (!opt.b0.empty() && opt.b0.size() != static_cast<std::size_t>(d))
            throw ConfigError("b0 needs one entry per coordinate");
        for (int i = 0; i < d; ++i) {
            const auto e = opt.b0.empty() ? Expression::constant(0.0, d)
                                          : Expression::parse(opt.b0[static_cast<std::size_t>(i)], d);
            if (e.depends_on_space()) throw ConfigError("b(t,0) must not depend on x");
            fam.b0.push_back(e);
        }
        p.cf = fam.field(opt.interval);
        p.phi = fam.phi();
        p.family = fam;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return p;
}

/**
 * Runs every structural check for the problem. Drift-family problems use the
 * explicit constants (lambda bound at eps = 1, a and c at eps_N from t_0 on);
 * other problems fit a and c on the lattice.
 */
inline HypothesisReport check_hypotheses(const ProblemSpec& p, const Lattice& lat) {
    HypothesisReport rep;
    rep.lattice = lat.describe(p.dim());
    rep.checks.push_back(check_regularity(p.cf, lat));
    rep.checks.push_back(check_ellipticity(p.cf, lat));

    auto lyap = check_lyapunov_h1iii(p.cf, p.phi, lat);
    std::optional<LinearDriftBounds> bounds;
    if (p.family) {
        try {
            bounds = linear_drift_bounds(*p.family, 1.0, lat);
            lyap.constants.emplace_back("lambda_bound", bounds->lambda_bound);
            if (lyap.pass() && lyap.constant("lambda_J") > bounds->lambda_bound + 1e-9) {
                lyap.verdict = Verdict::Fail;
                lyap.note = "lattice lambda_J exceeds the explicit bound";
            }
        } catch (const CheckError& e) {
            lyap.note = e.what();
        }
    }
    rep.checks.push_back(lyap);

    const auto dis = check_dissipativity(p.cf, lat, p.p0);
    rep.checks.push_back(dis.h2);
    rep.checks.push_back(dis.h3i);
    rep.checks.push_back(dis.h3ii);
    {
        CheckResult s{"sigma_p", Verdict::Pass, {}, std::nullopt, "gradient rates from k_0, rho_0"};
        s.constants = {{"k_0", dis.k0}, {"rho_0", dis.rho0}};
        if (dis.rho0 == 0.0) s.constants.emplace_back("sigma_1", compute_sigma_p(1.0, dis.k0, dis.rho0, p.dim()));
        s.constants.emplace_back("sigma_2", compute_sigma_p(2.0, dis.k0, dis.rho0, p.dim()));
        rep.checks.push_back(s);
    }

    LyapunovCandidate lc{p.phi, LyapunovKind::H34, p.a, p.c, p.t0};
    Lattice late = lat;
    if (p.family && bounds && !(p.a && p.c)) {
        lc.a = bounds->a;
        lc.c = bounds->c;
        lc.t0 = bounds->t0;
    }
    if (lc.t0 > late.t_min) {
        const double span = late.t_max - late.t_min;
        late.t_min = lc.t0;
        late.t_max = std::max(late.t_max, lc.t0 + span);
    }
    rep.checks.push_back(check_hyp4(p.cf, lc, late));
    rep.checks.push_back(check_hyp5(p.cf, p.phi, lat));
    if (p.family) rep.checks.push_back(check_linear_drift_family(*p.family, lat));
    return rep;
}

} // namespace kolmo

#pragma once

/**
 * @file verify.hpp
 * @brief Per-problem verification suite: hypothesis checks, contraction and
 *        positivity, conservation and kernels, Chapman-Kolmogorov, pointwise
 *        gradient bounds, evolution system of measures.
 *
 * Summary lines that assert an inequality carry its tag: contractive, loe,
 * grad-punt, invar, contr.
 */

#include "kolmo/config.hpp"
#include "kolmo/gradients.hpp"
#include "kolmo/measures.hpp"
#include "kolmo/presets.hpp"

#include <chrono>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace kolmo {

struct CriterionResult {
    std::string id;
    std::string name;
    std::string tag;  ///< inequality tag, empty when none
    Outcome outcome = Outcome::Pass;
    std::string detail;
    std::vector<std::pair<std::string, double>> constants;
    double seconds = 0.0;
    bool budget_exceeded = false;

    CriterionResult() = default;
    CriterionResult(std::string id_, std::string name_, std::string tag_)
        : id(std::move(id_)), name(std::move(name_)), tag(std::move(tag_)) {}

    bool pass() const { return outcome == Outcome::Pass || outcome == Outcome::NotApplicable; }
};

struct VerifyReport {
    std::string problem;
    HypothesisReport hypotheses;
    std::vector<CriterionResult> rows;

    bool all_pass() const {
        for (const auto& r : rows)
            if (!r.pass()) return false;
        return true;
    }
    bool budget_exceeded() const {
        for (const auto& r : rows)
            if (r.budget_exceeded) return true;
        return false;
    }

    void write_summary(std::ostream& out) const {
        out << "problem: " << problem << '\n';
        for (const auto& r : rows) {
            out << (r.pass() ? (r.outcome == Outcome::NotApplicable ? "N/A " : "PASS") : "FAIL") << "  " << r.id << ' ';
            if (!r.tag.empty()) out << '[' << r.tag << "] ";
            out << r.name;
            for (const auto& [k, v] : r.constants) out << ' ' << k << '=' << format_double(v);
            if (!r.detail.empty()) out << " (" << r.detail << ')';
            if (r.seconds > 0.0) out << " [" << format_double(r.seconds) << " s]";
            out << '\n';
        }
        out << "overall: " << (all_pass() ? "PASS" : "FAIL") << '\n';
    }

    void write_csv(std::ostream& out) const {
        CsvWriter w(out);
        w.meta("problem", problem);
        w.header({"id", "name", "tag", "outcome", "constants", "detail"});
        for (const auto& r : rows) {
            std::string consts;
            for (const auto& [k, v] : r.constants) consts += (consts.empty() ? "" : ";") + k + "=" + format_double(v);
            w.row_strings({r.id, r.name, r.tag, to_string(r.outcome), consts, r.detail});
        }
    }
};

namespace detail {

/// Runs fn, timing it and turning budget or numerical failures into a failed row.
inline CriterionResult timed(std::string id, std::string name, std::string tag,
                             const std::function<void(CriterionResult&)>& fn) {
    CriterionResult r{std::move(id), std::move(name), std::move(tag)};
    const auto t0 = std::chrono::steady_clock::now();
    try {
        fn(r);
    } catch (const BudgetExceeded& e) {
        r.outcome = Outcome::Fail;
        r.budget_exceeded = true;
        r.detail = std::string("budget exceeded: ") + e.what();
    } catch (const NumericalError& e) {
        r.outcome = Outcome::Fail;
        r.detail = std::string("numerical error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline Outcome outcome_of(bool ok) { return ok ? Outcome::Pass : Outcome::Fail; }

} // namespace detail

/// Bounded corpus functions plus the half-space indicator.
inline std::vector<TestFunction> bounded_corpus(int d) {
    std::vector<TestFunction> out;
    for (auto& tf : standard_corpus(d))
        if (tf.bounded) out.push_back(tf);
    out.push_back({"half-space", half_space_indicator(d), true, true});
    return out;
}

/**
 * sup|G(t,s)f| <= sup|f| + 1e-9 and f >= 0 => G(t,s)f >= -1e-9 on the largest
 * exhaustion box, for t - s in taus. Runs whose exhaustion gap stays above
 * tol are counted but still checked.
 */
inline CriterionResult check_contraction(const ProblemSpec& p, const std::vector<double>& taus,
                                         const Discretization& disc, double s = 0.0) {
    return detail::timed("1", "contraction & positivity", "contractive", [&](CriterionResult& r) {
        double worst_excess = -std::numeric_limits<double>::infinity(), worst_min = 0.0;
        int runs = 0, unconverged = 0;
        for (double tau : taus)
            for (const auto& tf : bounded_corpus(p.dim())) {
                const auto res = exhaust(p.cf, tf.f, s, s + tau, disc.K, disc.exhaust_settings());
                const auto& u = res.trajectory.back();
                const auto f0 = sample(tf.f, u.grid, s);
                double sup_u = 0.0, sup_f = 0.0, min_u = std::numeric_limits<double>::infinity();
                for (double v : u.values) {
                    sup_u = std::max(sup_u, std::abs(v));
                    min_u = std::min(min_u, v);
                }
                for (double v : f0.values) sup_f = std::max(sup_f, std::abs(v));
                worst_excess = std::max(worst_excess, sup_u - sup_f);
                if (tf.nonnegative) worst_min = std::min(worst_min, min_u);
                ++runs;
                unconverged += res.converged ? 0 : 1;
            }
        r.outcome = detail::outcome_of(worst_excess <= 1e-9 && worst_min >= -1e-9);
        r.constants = {{"max(sup|Gf|-sup|f|)", worst_excess}, {"min Gf (f>=0)", worst_min}};
        r.detail = std::to_string(runs) + " runs";
        if (unconverged) r.detail += ", " + std::to_string(unconverged) + " with exhaustion gap above tol";
    });
}

/// |G(t,s)1 - 1| on B_K, kernel rows as probability vectors, strict positivity.
inline CriterionResult check_conservation(const ProblemSpec& p, const Discretization& disc, double s = 0.0,
                                          double t = 0.25) {
    return detail::timed("2", "conservation & kernels", "", [&](CriterionResult& r) {
        const EvolutionOperator G(p.cf, s, t, disc);
        const auto one = G.apply(Expression::constant(1.0, p.dim()));
        double cons = 0.0;
        for (double v : one.values) cons = std::max(cons, std::abs(v - 1.0));
        const auto k = compute_kernel(p.cf, s, t, disc, KernelMode::Adjoint);
        const double defect = k.max_mass_defect(), pos = k.min_entry_within(disc.K);
        r.outcome = detail::outcome_of(cons <= disc.eps_cons && defect <= disc.eps_cons && pos > 0.0);
        r.constants = {{"sup|G1-1|", cons}, {"max row defect", defect}, {"min entry", pos}};
    });
}

/// sup_{B_K} |G(t,r)G(r,s)f - G(t,s)f| over the bounded corpus.
inline CriterionResult check_evolution_law(const ProblemSpec& p, const Discretization& disc, double s = 0.0,
                                           double r_mid = 0.5, double t = 1.0, double tol = 5e-3) {
    return detail::timed("3", "Chapman-Kolmogorov", "loe", [&](CriterionResult& r) {
        std::vector<Expression> corpus;
        for (const auto& tf : bounded_corpus(p.dim())) corpus.push_back(tf.f);
        const double res = check_chapman_kolmogorov(p.cf, s, r_mid, t, corpus, disc);
        r.outcome = detail::outcome_of(res <= tol);
        r.constants = {{"residual", res}};
    });
}

/**
 * |grad G(t,s)f|^p <= e^{sigma_p (t-s)} G(t,s)|grad f|^p for p in {1, 2, 4}
 * (p = 1 only when rho_0 = 0). Not applicable unless H2 or H3(ii) holds.
 */
inline CriterionResult check_gradient_bounds(const ProblemSpec& p, const HypothesisReport& hyp,
                                             const Discretization& disc, double s = 0.0, double t = 1.0) {
    return detail::timed("6", "pointwise gradient estimate", "grad-punt", [&](CriterionResult& r) {
        const auto& h3 = hyp.get("H3(ii)");
        if (!h3.pass() || !h3.has("k_0")) {
            r.outcome = Outcome::NotApplicable;
            r.detail = "dissipativity hypotheses do not hold";
            return;
        }
        const double k0 = h3.constant("k_0"), rho0 = h3.constant("rho_0");
        const std::vector<std::string> fs{"sin(x1)", "x1/sqrt(1+x1^2)", "exp(-x1^2)"};
        double worst = std::numeric_limits<double>::infinity();
        bool ok = true;
        for (double q : {1.0, 2.0, 4.0}) {
            if (q == 1.0 && rho0 != 0.0) continue;
            const double sigma = compute_sigma_p(q, k0, rho0, p.dim());
            r.constants.emplace_back("sigma_" + format_double(q), sigma);
            for (const auto& f : fs) {
                const auto rep = verify_pointwise(p.cf, s, t, q, sigma, Expression::parse(f, p.dim()), disc);
                worst = std::min(worst, rep.min_margin / rep.scale);
                ok = ok && rep.min_margin >= -rep.tol;
            }
        }
        r.constants.emplace_back("min margin/scale", worst);
        r.outcome = detail::outcome_of(ok);
    });
}

/**
 * Krylov-Bogoliubov system from x0 = 0 at the anchors: Cauchy within eps_KB,
 * invariance residual <= 1e-2 sup|f| on the bounded corpus, positive density
 * on B_K. Not applicable unless H4 holds.
 */
inline CriterionResult check_measures(const ProblemSpec& p, const HypothesisReport& hyp,
                                      const std::vector<double>& anchors, const SystemSettings& cfg,
                                      const Discretization& mdisc) {
    return detail::timed("8", "evolution system of measures", "invar", [&](CriterionResult& r) {
        if (!hyp.get("H4").pass()) {
            r.outcome = Outcome::NotApplicable;
            r.detail = "H4 does not hold";
            return;
        }
        const auto sys = build_evolution_system(p.cf, Point(static_cast<std::size_t>(p.dim()), 0.0), anchors, cfg, mdisc);
        double cauchy = 0.0, horizon = 0.0, second = 0.0, min_density = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < sys.anchors().size(); ++k) {
            cauchy = std::max(cauchy, sys.cauchy_tv()[k]);
            horizon = std::max(horizon, sys.horizon_used()[k]);
            second = std::max(second, moments(sys.anchors()[k], 2.0));
            min_density = std::min(min_density, check_lebesgue_equivalence(sys.anchors()[k], mdisc.K));
        }
        std::vector<Expression> corpus;
        std::vector<double> sups;
        const Grid box(p.dim(), mdisc.R0, mdisc.h);
        for (const auto& tf : bounded_corpus(p.dim())) {
            corpus.push_back(tf.f);
            double m = 0.0;
            for (double v : sample(tf.f, box, 0.0).values) m = std::max(m, std::abs(v));
            sups.push_back(m);
        }
        std::vector<std::pair<double, double>> pairs;
        for (std::size_t i = 0; i + 1 < anchors.size(); ++i) pairs.emplace_back(anchors[i + 1], anchors[i]);
        if (anchors.size() >= 2) pairs.emplace_back(anchors.back(), anchors.front());
        const auto inv = invariance_residual(sys, corpus, pairs, mdisc);
        double worst = 0.0;
        for (const auto& row : inv.rows) worst = std::max(worst, row.residual / std::max(sups[row.f], 1e-300));
        r.outcome = detail::outcome_of(cauchy <= cfg.eps_kb && worst <= 1e-2 && min_density > 0.0);
        r.constants = {{"cauchy_tv", cauchy},       {"horizon", horizon}, {"invariance/sup|f|", worst},
                       {"max second moment", second}, {"min density", min_density}};
    });
}

/// Hypotheses followed by criteria 1, 2, 3, 6, 8 for the configured problem.
inline VerifyReport verify_all(const RunConfig& rc, int workers = 1) {
    VerifyReport rep;
    rep.problem = rc.problem.name;
    Lattice lat = rc.lattice;
    lat.workers = workers;
    Discretization disc = rc.disc;
    disc.workers = workers;
    Discretization mdisc = rc.measure_disc;
    mdisc.workers = workers;

    {
        CriterionResult h{"H", "hypotheses", ""};
        const auto t0 = std::chrono::steady_clock::now();
        rep.hypotheses = check_hypotheses(rc.problem, lat);
        h.outcome = detail::outcome_of(rep.hypotheses.all_pass());
        for (const auto& c : rep.hypotheses.checks) {
            if (!c.pass() && c.verdict != Verdict::NotApplicable) h.detail += (h.detail.empty() ? "failed: " : ", ") + c.name;
            for (const auto& [k, v] : c.constants)
                if (k == "eta_0" || k == "k_0" || k == "rho_0" || k == "sigma_1" || k == "a" || k == "c" || k == "t_0" ||
                    k == "lambda_J") {
                    bool seen = false;
                    for (const auto& kv : h.constants) seen = seen || kv.first == k;
                    if (!seen) h.constants.emplace_back(k, v);
                }
        }
        h.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rep.rows.push_back(h);
    }
    rep.rows.push_back(check_contraction(rc.problem, rc.task.taus, disc));
    rep.rows.push_back(check_conservation(rc.problem, disc));
    rep.rows.push_back(check_evolution_law(rc.problem, disc));
    rep.rows.push_back(check_gradient_bounds(rc.problem, rep.hypotheses, disc));
    rep.rows.push_back(check_measures(rc.problem, rep.hypotheses, rc.task.anchors, rc.system, mdisc));
    return rep;
}

} // namespace kolmo

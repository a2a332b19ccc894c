// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include "kolmo/config.hpp"
#include "kolmo/oracle.hpp"
#include "kolmo/semigroup.hpp"
#include "kolmo/verify.hpp"
#include "oracles.hpp"

#include <chrono>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

using namespace kolmo;

namespace {

const int kWorkers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

CoefficientField preset(const std::string& name) { return make_preset(name, {}).cf; }
Expression parse1(const std::string& s) { return Expression::parse(s, 1); }
double beta_nonaut(double t) { return -(2 + std::sin(t)); }

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(3);
    o << v;
    return o.str();
}

/// Accumulates sub-checks; the first failing one is named in the detail.
struct Tally {
    bool ok = true;
    std::vector<std::string> notes;

    void expect(bool cond, const std::string& what) {
        if (!cond) ok = false;
        if (!cond || notes.size() < 16) notes.push_back((cond ? "" : "FAILED ") + what);
    }
    std::string detail() const {
        std::string s;
        for (const auto& n : notes) s += (s.empty() ? "" : "; ") + n;
        return s;
    }
};

using Criterion = std::function<void(Tally&)>;

/// Gaussian cell masses on a 1D grid, boundary cells clipped to the box.
DiscreteMeasure gaussian_cells(const Grid& g, double t, double var) {
    DiscreteMeasure m(g, t);
    const double h = g.h(), R = g.radius();
    for (std::size_t n = 0; n < g.size(); ++n) {
        const double x = g.coordinate(n, 0);
        m.weights[n] = oracle::normal_mass(std::max(-R, x - h / 2), std::min(R, x + h / 2), 0.0, var);
    }
    return m;
}

// ---------------------------------------------------------------------------

void c1_contraction(Tally& v) {
    for (const auto& name : preset_names()) {
        const auto r = check_contraction(make_preset(name), {0.1, 1.0, 5.0}, Discretization{});
        v.expect(r.outcome == Outcome::Pass, name + " excess " + fmt(r.constants[0].second) + " min " + fmt(r.constants[1].second) +
                                                 " (" + r.detail + ")");
    }
}

void c2_conservation(Tally& v) {
    for (const auto& name : preset_names()) {
        const auto r = check_conservation(make_preset(name), Discretization{});
        v.expect(r.outcome == Outcome::Pass, name + " |G1-1| " + fmt(r.constants[0].second) + " defect " +
                                                 fmt(r.constants[1].second) + " min " + fmt(r.constants[2].second));
    }
    // heat rows against exact Gaussian cell masses
    const double tau = 0.25;
    const auto k = compute_kernel(preset("heat"), 0.0, tau, Discretization{});
    const double h = k.grid.h(), R = k.grid.radius();
    double worst = 0.0;
    for (std::size_t i = 0; i < k.sources.size(); ++i) {
        const double x = k.grid.coordinate(k.sources[i], 0);
        std::vector<double> ref(k.grid.size()), row(k.grid.size());
        for (std::size_t j = 0; j < k.grid.size(); ++j) {
            const double y = k.grid.coordinate(j, 0);
            ref[j] = oracle::normal_mass(std::max(-R, y - h / 2), std::min(R, y + h / 2), x, 2 * tau);
            row[j] = k.P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
        worst = std::max(worst, total_variation(row, ref));
    }
    v.expect(worst <= 5e-2, "heat row TV " + fmt(worst));
}

void c3_chapman_kolmogorov(Tally& v) {
    for (const auto& name : preset_names()) {
        const auto r = check_evolution_law(make_preset(name), Discretization{});
        v.expect(r.outcome == Outcome::Pass, name + " " + fmt(r.constants[0].second));
    }
}

void c4_s_derivative(Tally& v) {
    // Gaussian-tailed data, below 1e-7 outside B_4
    const std::vector<std::string> corpus{"exp(-x1^2)", "exp(-2*(x1-0.5)^2)", "x1^2*exp(-x1^2)", "sin(2*x1)*exp(-x1^2)"};
    for (const char* name : {"ou-autonomous", "ou-nonautonomous"}) {
        double worst = 0.0;
        for (const auto& f : corpus) worst = std::max(worst, s_derivative_residual(preset(name), 1.5, 0.5, parse1(f)));
        v.expect(worst <= 5e-3, std::string(name) + " " + fmt(worst));
    }
}

void c5_smoothing(Tally& v) {
    Discretization fine;
    fine.h = 0.025;
    for (const char* name : {"heat", "ou-autonomous", "ou-nonautonomous"}) {
        const auto r = verify_smoothing_rate(preset(name), 0.0, half_space_indicator(1), fine);
        v.expect(r.slope >= -0.6 && r.slope <= -0.4, std::string(name) + " slope " + fmt(r.slope));
    }
}

void c6_pointwise(Tally& v) {
    const std::vector<std::string> corpus{"sin(x1)", "x1/sqrt(1+x1^2)", "exp(-x1^2)", "1/(1+exp(-4*x1))"};
    for (const auto& name : preset_names()) {
        const auto p = make_preset(name);
        const auto hyp = check_hypotheses(p, Lattice{});
        const auto& h3 = hyp.get("H3(ii)");
        if (!h3.pass()) {
            v.notes.push_back(name + " n/a");
            continue;
        }
        const double k0 = h3.constant("k_0"), rho0 = h3.constant("rho_0");
        double worst = std::numeric_limits<double>::infinity();
        for (double q : {1.0, 2.0, 4.0}) {
            if (q == 1.0 && rho0 != 0.0) continue;
            const double sigma = compute_sigma_p(q, k0, rho0, 1);
            for (const auto& f : corpus) {
                const auto r = verify_pointwise(p.cf, 0.0, 1.0, q, sigma, parse1(f));
                worst = std::min(worst, r.min_margin / r.scale);
            }
        }
        v.expect(worst >= -1e-3, name + " min margin/scale " + fmt(worst));
    }
    const auto sharp = verify_pointwise(preset("ou-autonomous"), 0.0, 1.0, 1.0, -1.0, parse1("x1/sqrt(1+x1^2)"));
    v.expect(sharp.relative_gap <= 5e-3, "ou-autonomous p=1 gap " + fmt(sharp.relative_gap));
}

void c7_decay(Tally& v) {
    const auto r = verify_exponential_decay(preset("ou-nonautonomous"), 0.0, parse1("sin(x1)"), {1.0, 1.5, 2.0, 2.5, 3.0}, 1.0, -1.0);
    v.expect(r.rate <= -1.0 + 0.1, "rate " + fmt(r.rate));
}

void c8_measures(Tally& v) {
    const std::vector<double> anchors{0.0, 2.0, 4.0};
    for (const char* name : {"ou-autonomous", "ou-nonautonomous"}) {
        const auto cf = preset(name);
        const auto disc = measure_discretization();
        const auto sys = build_evolution_system(cf, Point{0.0}, anchors, SystemSettings{}, disc);
        double cauchy = 0.0, horizon = 0.0, tv = 0.0;
        for (std::size_t k = 0; k < anchors.size(); ++k) {
            cauchy = std::max(cauchy, sys.cauchy_tv()[k]);
            horizon = std::max(horizon, sys.horizon_used()[k]);
            const double var = std::string(name) == "ou-autonomous" ? 1.0 : oracle::system_variance(beta_nonaut, anchors[k]);
            tv = std::max(tv, total_variation(sys.anchors()[k], gaussian_cells(sys.anchors()[k].grid, anchors[k], var)));
        }
        v.expect(cauchy <= 1e-2 && horizon <= 40.0, std::string(name) + " cauchy " + fmt(cauchy) + " by H=" + fmt(horizon));
        v.expect(tv <= 5e-2, std::string(name) + " TV vs Gaussian " + fmt(tv));

        std::vector<Expression> corpus;
        std::vector<double> sups;
        for (const auto& tf : bounded_corpus(1)) {
            corpus.push_back(tf.f);
            double m = 0.0;
            for (double x : sample(tf.f, Grid(1, disc.R0, disc.h), 0.0).values) m = std::max(m, std::abs(x));
            sups.push_back(m);
        }
        const auto inv = invariance_residual(sys, corpus, {{2.0, 0.0}, {4.0, 2.0}, {4.0, 0.0}}, disc);
        double worst = 0.0;
        for (const auto& r : inv.rows) worst = std::max(worst, r.residual / sups[r.f]);
        v.expect(worst <= 1e-2, std::string(name) + " invariance " + fmt(worst));
        if (std::string(name) == "ou-autonomous") {
            const double m2 = moments(sys.anchors()[0], 2.0);
            v.expect(std::abs(m2 - 1.0) <= 2e-2, "second moment " + fmt(m2));
        }
    }
}

void c9_asymptotics(Tally& v) {
    const auto cf = preset("ou-autonomous");
    const auto sys = build_evolution_system(cf, Point{0.0}, {0.0});
    const auto r = check_asymptotics(cf, sys.anchors()[0], parse1("sin(x1)"), {2.0, 3.0, 4.0, 5.0, 6.0}, 4.0, -1.0);
    v.expect(std::abs(r.rate + 1.0) <= 0.15, "rate " + fmt(r.rate));
}

void c10_semigroup(Tally& v) {
    const auto cf = preset("ou-nonautonomous");
    const auto disc = measure_discretization();
    const Grid g(1, disc.R0, disc.h);
    const double ds = 0.05;
    auto field = [&](const std::string& f, double a, double b) { return SpaceTimeField::sample(parse1(f), g, a, b, ds); };

    const auto lin = field("sin(t)*x1", 0.0, 3.0);
    const double law = std::max(check_semigroup_law(preset("ou-autonomous"), lin, 0.5, 0.75, disc.K, disc, kWorkers),
                                check_semigroup_law(cf, field("exp(-(x1-t)^2)", 0.0, 3.0), 0.3, 0.45, disc.K, disc, kWorkers));
    v.expect(law <= 5e-3, "law " + fmt(law));

    const auto c = field("sin(3*t) + 2", 0.0, 3.0);
    bool exact = true;
    for (double t : {0.05, 0.5, 1.25}) {
        const auto Tc = apply_T(cf, t, c, disc, kWorkers);
        for (std::size_t j = 0; j < Tc.size(); ++j) exact = exact && Tc.slices[j].values == c.slices[j].values;
    }
    v.expect(exact, "translation exact");

    const auto nu = build_space_time_measure(cf, Point{0.0}, 0.0, 4.0, ds);
    const std::string bump = "exp(-((t-1.5)/0.3)^2)";
    double inv = 0.0;
    bool inv_ok = true;
    for (const std::string sp : {"x1^2", "exp(-(x1-1)^2)", "1"})
        for (double t : {0.25, 1.0}) {
            const auto r = check_T_invariance(cf, field(bump + "*" + sp, 0.0, 4.0), t, nu, 2e-2, disc, kWorkers);
            inv = std::max(inv, r.residual / r.scale);
            inv_ok = inv_ok && r.pass;
        }
    v.expect(inv_ok, "nu invariance residual/scale " + fmt(inv));

    double inf = 0.0;
    bool inf_ok = true;
    for (const std::string sp : {"exp(-x1^2)", "exp(-2*(x1-0.5)^2)", "x1^2*exp(-x1^2)"}) {
        const auto r = infinitesimal_invariance_residual(cf, parse1(bump + "*" + sp), nu);
        inf = std::max(inf, std::abs(r.integral) / r.tol);
        inf_ok = inf_ok && r.pass;
    }
    v.expect(inf_ok, "|int G phi dnu| / tol " + fmt(inf));

    double ratio = 0.0;
    for (double p : {1.0, 2.0})
        for (const std::string sp : {"1", "x1", "sin(x1)", "1/(1+exp(-4*x1))"})
            ratio = std::max(ratio, check_Lp_contraction(cf, field(bump + "*" + sp, 0.0, 4.0), 0.5, p, nu, disc, kWorkers).ratio);
    v.expect(ratio <= 1.01, "L^p ratio " + fmt(ratio));
}

void c11_oracle(Tally& v) {
    OracleSettings cfg;
    cfg.N = 100000;
    cfg.workers = kWorkers;
    const std::vector<OracleProbe> probes{
        {"heat-one", preset("heat"), Expression::constant(1.0, 1), 0.0, 0.5, {0.3}},
        {"heat-sin4", preset("heat"), parse1("sin(4*x1)"), 0.0, 0.1, {0.4}},
        {"heat-gauss", preset("heat"), parse1("exp(-x1^2)"), 0.0, 0.5, {0.3}},
        {"heat-step", preset("heat"), half_space_indicator(1), 0.0, 0.25, {0.2}},
        {"ou-x2", preset("ou-autonomous"), parse1("x1^2"), 0.0, 1.0, {1.0}},
        {"ou-sin", preset("ou-autonomous"), parse1("sin(x1)"), 0.0, 1.0, {0.5}},
        {"ou-gauss", preset("ou-autonomous"), parse1("exp(-x1^2)"), 0.0, 0.5, {0.5}},
        {"nonaut-x2", preset("ou-nonautonomous"), parse1("x1^2"), 0.2, 0.7, {1.0}},
        {"nonaut-sin", preset("ou-nonautonomous"), parse1("sin(x1)"), 1.0, 2.0, {-0.7}},
        {"sec7-gauss", preset("sec7"), parse1("exp(-x1^2)"), 0.0, 1.0, {0.0}},
        {"sec7-step", preset("sec7"), parse1("1/(1+exp(-4*x1))"), 0.5, 1.5, {0.3}},
        {"expanding-gauss", preset("expanding"), parse1("exp(-x1^2)"), 0.0, 0.5, {0.2}},
    };
    const auto rep = cross_check(probes, Discretization{}, cfg, 1e-2);
    double worst = 0.0;
    for (const auto& r : rep.rows) {
        worst = std::max(worst, r.diff / r.bound);
        if (!r.pass) v.expect(false, r.label + " pde " + fmt(r.pde) + " mc " + fmt(r.mc) + " bound " + fmt(r.bound));
    }
    v.expect(rep.pass_rate() == 1.0, "pass rate " + fmt(rep.pass_rate()) + " of 12, max diff/bound " + fmt(worst));
    Discretization coarse;
    coarse.h = 0.4;
    const auto neg = cross_check({probes[1]}, coarse, cfg, 1e-2);
    v.expect(!neg.all_pass(), "coarse-grid control diff " + fmt(neg.rows[0].diff) + " > bound " + fmt(neg.rows[0].bound));
}

void c12_pipeline(Tally& v) {
    const auto rc = load_config(KOLMO_SOURCE_DIR "/configs/sec7.ini");
    const auto rep = verify_all(rc, kWorkers);
    for (const char* h : {"H1(i)", "H1(ii)", "H1(iii)", "H2", "H3(ii)", "H4"})
        v.expect(rep.hypotheses.get(h).pass(), h);
    const auto& h3 = rep.hypotheses.get("H3(ii)");
    const auto& h4 = rep.hypotheses.get("H4");
    v.expect(h3.constant("k_0") == -1.0 && h3.constant("rho_0") == 0.0,
             "k_0 " + fmt(h3.constant("k_0")) + " rho_0 " + fmt(h3.constant("rho_0")));
    v.notes.push_back("a " + fmt(h4.constant("a")) + " c " + fmt(h4.constant("c")) + " t_0 " + fmt(h4.constant("t_0")));
    for (const auto& r : rep.rows)
        if (r.id != "H") v.expect(r.outcome == Outcome::Pass, "criterion " + r.id + " " + to_string(r.outcome));
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, Criterion>> criteria{
        {"1 contraction & positivity", c1_contraction},
        {"2 conservation & kernels", c2_conservation},
        {"3 Chapman-Kolmogorov", c3_chapman_kolmogorov},
        {"4 s-derivative formula", c4_s_derivative},
        {"5 uniform smoothing", c5_smoothing},
        {"6 pointwise gradient estimate", c6_pointwise},
        {"7 exponential gradient decay", c7_decay},
        {"8 evolution system of measures", c8_measures},
        {"9 asymptotics", c9_asymptotics},
        {"10 space-time semigroup", c10_semigroup},
        {"11 oracle agreement", c11_oracle},
        {"12 sec7 pipeline", c12_pipeline},
    };
    int failed = 0;
    const auto start = std::chrono::steady_clock::now();
    for (const auto& [name, fn] : criteria) {
        Tally v;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fn(v);
        } catch (const std::exception& e) {
            v.expect(false, std::string("exception: ") + e.what());
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (v.ok ? "PASS " : "FAIL ") << name << " [" << fmt(sec) << " s] " << v.detail() << std::endl;
        failed += v.ok ? 0 : 1;
    }
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (failed ? "FAIL" : "PASS") << " overall: " << 12 - failed << "/12 criteria, " << fmt(total) << " s" << std::endl;
    return failed ? 1 : 0;
}

#pragma once

/**
 * @file config.hpp
 * @brief Run configuration: an INI file with sections [problem], [numerics],
 *        [oracle], [outputs], [task]. Unknown sections and keys are rejected
 *        before anything is computed. Overrides use "section.key=value".
 */

#include "kolmo/measures.hpp"
#include "kolmo/oracle.hpp"
#include "kolmo/presets.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace kolmo {

struct Outputs {
    std::string directory = "out";
    std::set<std::string> csv{"all"};

    bool wants(const std::string& name) const { return csv.count("all") > 0 || csv.count(name) > 0; }
};

/// Parameters of the single-shot subcommands (solve, kernel, gradients, ...).
struct TaskSettings {
    double s = 0.0;
    double t = 1.0;
    std::string f = "exp(-x1^2)";
    Point x;                                   ///< probe point, default origin
    double p = 1.0;                            ///< gradient exponent
    std::vector<double> anchors{0.0, 2.0, 4.0};
    double slab_a = 0.0, slab_b = 4.0, ds = 0.05;
    double shift = 0.5;                        ///< semigroup time t
    std::vector<double> taus{0.1, 1.0, 5.0};   ///< contraction ladder
};

struct RunConfig {
    std::string preset = "sec7";
    PresetOptions preset_options;
    ProblemSpec problem;
    Lattice lattice;
    Discretization disc;
    Discretization measure_disc = measure_discretization();
    SystemSettings system;
    OracleSettings oracle;
    double allowance = 1e-2;
    Outputs outputs;
    TaskSettings task;
    boost::property_tree::ptree tree;  ///< the validated input, overrides applied
};

namespace detail {

/// Allowed keys per section.
inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"problem", {"preset", "d", "t_min", "t_max", "N", "C", "b0", "q", "b", "phi", "a", "c", "t0", "p0"}},
        {"numerics",
         {"R0", "h", "dt", "theta", "bc", "K", "tol", "max_refinements", "eps_cons", "eps_meas", "eps_kb", "horizons",
          "kb_stride", "measure_h", "measure_dt", "lattice_t_min", "lattice_t_max", "lattice_times", "lattice_radius",
          "lattice_radial", "lattice_directions", "lattice_xi"}},
        {"oracle", {"N", "dt_mc", "seed", "drift_clip", "allowance"}},
        {"outputs", {"directory", "csv"}},
        {"task", {"s", "t", "f", "x", "p", "anchors", "slab_a", "slab_b", "ds", "shift", "taus"}},
    };
    return s;
}

inline double to_double(const std::string& key, std::string v) {
    boost::algorithm::trim(v);
    const std::string l = boost::algorithm::to_lower_copy(v);
    if (l == "inf" || l == "+inf" || l == "infinity") return std::numeric_limits<double>::infinity();
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
    return out;
}

inline long long to_int(const std::string& key, std::string v) {
    boost::algorithm::trim(v);
    long long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
    return out;
}

inline std::vector<std::string> split_list(const std::string& v, char sep) {
    std::vector<std::string> parts;
    if (boost::algorithm::trim_copy(v).empty()) return parts;
    boost::algorithm::split(parts, v, [sep](char c) { return c == sep; });
    for (auto& p : parts) boost::algorithm::trim(p);
    return parts;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& p : split_list(v, ',')) out.push_back(to_double(key, p));
    return out;
}

inline void validate_tree(const boost::property_tree::ptree& tree) {
    const auto& schema = config_schema();
    for (const auto& [section, body] : tree) {
        const auto it = schema.find(section);
        if (it == schema.end()) {
            if (body.empty()) throw ConfigError("key '" + section + "' outside any section");
            throw ConfigError("unknown section [" + section + "]");
        }
        for (const auto& [key, value] : body) {
            if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
            if (!value.empty()) throw ConfigError("nested key under " + section + "." + key);
        }
    }
}

} // namespace detail

/// Apply "section.key=value" to the tree (validated against the schema).
inline void apply_override(boost::property_tree::ptree& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' needs section.key=value");
    const std::string path = boost::algorithm::trim_copy(assignment.substr(0, eq));
    const std::string value = boost::algorithm::trim_copy(assignment.substr(eq + 1));
    const auto dot = path.find('.');
    if (dot == std::string::npos) throw ConfigError("override key '" + path + "' needs a section prefix");
    const std::string section = path.substr(0, dot), key = path.substr(dot + 1);
    const auto& schema = detail::config_schema();
    const auto it = schema.find(section);
    if (it == schema.end()) throw ConfigError("unknown section [" + section + "] in override");
    if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "] override");
    tree.put(boost::property_tree::ptree::path_type(section + "/" + key, '/'), value);
}

/// Build a RunConfig from a validated tree; every missing key takes its default.
inline RunConfig config_from_tree(const boost::property_tree::ptree& tree) {
    using detail::to_double;
    using detail::to_int;
    detail::validate_tree(tree);
    RunConfig rc;
    rc.tree = tree;
    auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
        const auto sec = tree.get_child_optional(section);
        if (!sec) return std::nullopt;
        const auto v = sec->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '/'));
        if (!v) return std::nullopt;
        return boost::algorithm::trim_copy(*v);
    };
    auto num = [&](const std::string& section, const std::string& key, double& out) {
        if (auto v = get(section, key)) out = to_double(section + "." + key, *v);
    };
    auto integer = [&](const std::string& section, const std::string& key, auto& out) {
        if (auto v = get(section, key)) out = static_cast<std::remove_reference_t<decltype(out)>>(to_int(section + "." + key, *v));
    };

    // [problem]
    if (auto v = get("problem", "preset")) rc.preset = *v;
    auto& po = rc.preset_options;
    integer("problem", "d", po.d);
    num("problem", "t_min", po.interval.t_min);
    num("problem", "t_max", po.interval.t_max);
    integer("problem", "N", po.N);
    if (auto v = get("problem", "C")) po.C = *v;
    if (auto v = get("problem", "b0")) po.b0 = detail::split_list(*v, ';');
    if (po.d < 1 || po.d > 3) throw ConfigError("problem.d must be 1..3");
    if (!(po.interval.t_max > po.interval.t_min)) throw ConfigError("problem interval is empty");

    const auto q = get("problem", "q"), b = get("problem", "b");
    try {
        if (rc.preset == "custom") {
            if (!q || !b) throw ConfigError("custom problems need problem.q and problem.b");
            rc.problem.name = "custom";
            rc.problem.cf = CoefficientField::parse(po.d, detail::split_list(*q, ';'), detail::split_list(*b, ';'), po.interval);
            rc.problem.phi = 1.0 + expr::abs2(po.d);
        } else {
            if (q || b) throw ConfigError("problem.q and problem.b are only allowed with preset = custom");
            rc.problem = make_preset(rc.preset, po);
        }
        if (auto v = get("problem", "phi")) rc.problem.phi = Expression::parse(*v, po.d);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("problem: ") + e.what());
    }
    if (auto v = get("problem", "a")) rc.problem.a = to_double("problem.a", *v);
    if (auto v = get("problem", "c")) rc.problem.c = to_double("problem.c", *v);
    num("problem", "t0", rc.problem.t0);
    num("problem", "p0", rc.problem.p0);

    // [numerics]
    auto& d = rc.disc;
    num("numerics", "R0", d.R0);
    num("numerics", "h", d.h);
    num("numerics", "dt", d.dt);
    num("numerics", "theta", d.theta);
    if (auto v = get("numerics", "bc")) {
        const auto l = boost::algorithm::to_lower_copy(*v);
        if (l == "neumann") d.bc = Boundary::Neumann;
        else if (l == "dirichlet") d.bc = Boundary::Dirichlet;
        else throw ConfigError("numerics.bc must be neumann or dirichlet");
    }
    num("numerics", "K", d.K);
    num("numerics", "tol", d.tol);
    integer("numerics", "max_refinements", d.max_refinements);
    num("numerics", "eps_cons", d.eps_cons);
    try {
        d.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("numerics: ") + e.what());
    }
    auto& md = rc.measure_disc;
    md.R0 = d.R0;
    md.K = d.K;
    md.theta = d.theta;
    md.bc = d.bc;
    md.tol = d.tol;
    md.max_refinements = d.max_refinements;
    md.eps_cons = d.eps_cons;
    num("numerics", "measure_h", md.h);
    num("numerics", "measure_dt", md.dt);
    try {
        md.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("numerics: ") + e.what());
    }
    num("numerics", "eps_meas", rc.system.eps_meas);
    num("numerics", "eps_kb", rc.system.eps_kb);
    if (auto v = get("numerics", "horizons")) rc.system.horizons = detail::to_doubles("numerics.horizons", *v);
    integer("numerics", "kb_stride", rc.system.stride);
    if (rc.system.horizons.size() < 2) throw ConfigError("numerics.horizons needs at least two entries");
    if (rc.system.stride < 1) throw ConfigError("numerics.kb_stride must be positive");

    auto& lat = rc.lattice;
    num("numerics", "lattice_t_min", lat.t_min);
    num("numerics", "lattice_t_max", lat.t_max);
    integer("numerics", "lattice_times", lat.n_times);
    num("numerics", "lattice_radius", lat.radius);
    integer("numerics", "lattice_radial", lat.n_radial);
    integer("numerics", "lattice_directions", lat.n_directions);
    integer("numerics", "lattice_xi", lat.n_xi);
    if (lat.n_times < 1 || lat.n_radial < 1 || !(lat.t_max >= lat.t_min) || !(lat.radius > 0.0))
        throw ConfigError("numerics: invalid verification lattice");

    // [oracle]
    auto& o = rc.oracle;
    integer("oracle", "N", o.N);
    num("oracle", "dt_mc", o.dt_mc);
    if (auto v = get("oracle", "seed")) o.seed = static_cast<std::uint64_t>(to_int("oracle.seed", *v));
    lat.seed = o.seed;
    num("oracle", "drift_clip", o.drift_clip);
    num("oracle", "allowance", rc.allowance);
    o.validate();

    // [outputs]
    if (auto v = get("outputs", "directory")) rc.outputs.directory = *v;
    if (auto v = get("outputs", "csv")) {
        rc.outputs.csv.clear();
        for (const auto& c : detail::split_list(*v, ',')) rc.outputs.csv.insert(c);
    }

    // [task]
    auto& t = rc.task;
    num("task", "s", t.s);
    num("task", "t", t.t);
    if (auto v = get("task", "f")) t.f = *v;
    if (auto v = get("task", "x")) t.x = detail::to_doubles("task.x", *v);
    if (t.x.empty()) t.x.assign(static_cast<std::size_t>(po.d), 0.0);
    if (static_cast<int>(t.x.size()) != po.d) throw ConfigError("task.x needs d coordinates");
    num("task", "p", t.p);
    if (auto v = get("task", "anchors")) t.anchors = detail::to_doubles("task.anchors", *v);
    num("task", "slab_a", t.slab_a);
    num("task", "slab_b", t.slab_b);
    num("task", "ds", t.ds);
    num("task", "shift", t.shift);
    if (auto v = get("task", "taus")) t.taus = detail::to_doubles("task.taus", *v);
    try {
        (void)Expression::parse(t.f, po.d);
    } catch (const Error& e) {
        throw ConfigError(std::string("task.f: ") + e.what());
    }
    return rc;
}

/// Read an INI file (empty path: all defaults), apply overrides, build the config.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    boost::property_tree::ptree tree;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        try {
            boost::property_tree::ini_parser::read_ini(in, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("config syntax: ") + e.what());
        }
    }
    detail::validate_tree(tree);
    for (const auto& o : overrides) apply_override(tree, o);
    return config_from_tree(tree);
}

inline RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {}) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    detail::validate_tree(tree);
    for (const auto& o : overrides) apply_override(tree, o);
    return config_from_tree(tree);
}

} // namespace kolmo

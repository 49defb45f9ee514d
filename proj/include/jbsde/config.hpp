#ifndef JBSDE_CONFIG_HPP
#define JBSDE_CONFIG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/controls.hpp"
#include "jbsde/generators.hpp"
#include "jbsde/lattice.hpp"
#include "jbsde/levy.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

constexpr int kSchemaVersion = 1;

// Named payoff: terminal functions of the final state. "call"/"put" take a
// strike, "butterfly" takes k1 < k2 < k3, "constant" takes value.
struct PayoffChoice {
    std::string name = "square";
    std::map<std::string, double> params;
    friend bool operator==(const PayoffChoice&, const PayoffChoice&) = default;
};

struct GeneratorChoice {
    std::string name = "zero";
    std::map<std::string, double> params;
    std::string nu_star;  // measure name for the linear family; empty = base measure
    friend bool operator==(const GeneratorChoice&, const GeneratorChoice&) = default;
};

struct LatticeParams {
    double x_lo = -10.0;
    double x_hi = 10.0;
    std::size_t n_x = 400;
    std::size_t n_t = 0;  // 0: choose from the CFL bound
    std::string boundary = "dirichlet";
    std::size_t csv_time_slices = 5;
    friend bool operator==(const LatticeParams&, const LatticeParams&) = default;
};

struct PathParams {
    std::size_t n_paths = 10000;
    std::size_t n_steps = 50;
    friend bool operator==(const PathParams&, const PathParams&) = default;
};

struct Tolerances {
    double k_tolerance_scale = 5e-2;   // |E[K_T]| <= this * max(1, |Y0|)
    double step_tolerance = 1e-3;      // slack for per-step mean K increments
    double lattice_tolerance = 2e-2;   // lattice bias allowance at reference resolution
    friend bool operator==(const Tolerances&, const Tolerances&) = default;
};

// Batch experiment description, loadable from a JSON config. load -> serialize
// -> load is the identity.
struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string experiment;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int workers = 0;  // 0: hardware concurrency; results are worker-independent
    double horizon = 1.0;

    std::vector<std::pair<std::string, LevyBaseMeasure>> measures;
    std::vector<std::pair<std::string, JumpMapCell>> jump_maps;
    std::vector<std::pair<std::string, ControlSpec>> controls;

    std::vector<std::string> control_family;  // names, for the Monte Carlo sup
    std::string base_measure;                 // reference F
    std::string lr_against;                   // optional second measure for likelihood ratios

    GeneratorChoice generator;
    PayoffChoice payoff;

    std::vector<std::pair<double, std::string>> control_grid;  // (a, measure name)
    LatticeParams lattice;
    PathParams paths;
    int mc_basis_degree = 4;
    int qv_window = 50;
    Tolerances tolerances;

    // appendix-checks inputs
    std::vector<std::pair<int, double>> inequality_cases = {{1, 0.5}, {2, 0.5}, {3, 0.25}};
    double appendix_sigma = 1.0;
    std::string appendix_measure;  // jump sizes/intensities of the exponential's jumps
    double appendix_delta = 0.5;
    double appendix_lambda = 1.0;

    // convergence driver
    std::string convergence_target = "solve-pide";
    int convergence_levels = 3;
    std::optional<double> reference_value;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

    const LevyBaseMeasure& measure(const std::string& name) const {
        for (const auto& [n, m] : measures)
            if (n == name) return m;
        throw ConfigError("unknown measure '" + name + "'");
    }
    const JumpMapCell& jump_map(const std::string& name) const {
        for (const auto& [n, m] : jump_maps)
            if (n == name) return m;
        throw ConfigError("unknown jump map '" + name + "'");
    }
    const ControlSpec& control(const std::string& name) const {
        for (const auto& [n, c] : controls)
            if (n == name) return c;
        throw ConfigError("unknown control '" + name + "'");
    }
};

namespace cfg_detail {

using nlohmann::ordered_json;

inline ordered_json predicate_to_json(const EventPredicate& p) {
    ordered_json all = ordered_json::array();
    for (const auto& a : p.all_of) {
        const char* kind = nullptr;
        switch (a.kind) {
            case AtomicPredicate::Kind::ValueGE: kind = "value_ge"; break;
            case AtomicPredicate::Kind::ValueLT: kind = "value_lt"; break;
            case AtomicPredicate::Kind::JumpsGE: kind = "jumps_ge"; break;
            case AtomicPredicate::Kind::JumpsLT: kind = "jumps_lt"; break;
        }
        all.push_back({{"kind", kind}, {"threshold", a.threshold}, {"anchor", a.anchor}});
    }
    return {{"all_of", all}};
}

inline EventPredicate predicate_from_json(const ordered_json& j) {
    EventPredicate p;
    for (const auto& a : j.at("all_of")) {
        const std::string kind = a.at("kind");
        AtomicPredicate ap;
        if (kind == "value_ge")
            ap.kind = AtomicPredicate::Kind::ValueGE;
        else if (kind == "value_lt")
            ap.kind = AtomicPredicate::Kind::ValueLT;
        else if (kind == "jumps_ge")
            ap.kind = AtomicPredicate::Kind::JumpsGE;
        else if (kind == "jumps_lt")
            ap.kind = AtomicPredicate::Kind::JumpsLT;
        else
            throw ConfigError("unknown predicate kind '" + kind + "'");
        ap.threshold = a.at("threshold");
        ap.anchor = a.at("anchor");
        p.all_of.push_back(ap);
    }
    return p;
}

inline ordered_json jump_map_to_json(const JumpMapCell& m) {
    if (m.kind() == JumpMapCell::Kind::Affine)
        return {{"kind", "affine"}, {"slope", m.slope()}, {"bound", m.bound_constant()}};
    ordered_json entries = ordered_json::array();
    for (const auto& [from, to] : m.entries()) entries.push_back({from, to});
    return {{"kind", "table"}, {"entries", entries}, {"bound", m.bound_constant()}};
}

inline JumpMapCell jump_map_from_json(const ordered_json& j) {
    const std::string kind = j.at("kind");
    if (kind == "affine") return JumpMapCell::affine(j.at("slope"), j.value("bound", 0.0));
    if (kind == "table") {
        std::vector<std::pair<double, double>> entries;
        for (const auto& e : j.at("entries")) entries.emplace_back(e.at(0), e.at(1));
        return JumpMapCell::table(std::move(entries), j.value("bound", 0.0));
    }
    throw ConfigError("unknown jump map kind '" + kind + "'");
}

inline ordered_json volatility_to_json(const Volatility& v) {
    if (v.dim == 1) return v.m[0];
    return {{"dim", v.dim}, {"m", v.m}};
}

inline Volatility volatility_from_json(const ordered_json& j) {
    if (j.is_number()) return Volatility::scalar(j.get<double>());
    return Volatility{j.at("dim"), j.at("m").get<std::vector<double>>()};
}

inline ordered_json control_to_json(const ControlSpec& c) {
    ordered_json cells = ordered_json::array();
    for (const auto& cell : c.cells()) {
        ordered_json branches = ordered_json::array();
        for (const auto& b : cell.branches)
            branches.push_back({{"when", predicate_to_json(b.when)},
                                {"alpha", volatility_to_json(b.alpha)},
                                {"beta", jump_map_to_json(b.beta)}});
        cells.push_back({{"start", cell.start}, {"branches", branches}});
    }
    return {{"horizon", c.horizon()}, {"cells", cells}};
}

inline ControlSpec control_from_json(const ordered_json& j, std::string name) {
    std::vector<ControlCell> cells;
    for (const auto& cj : j.at("cells")) {
        ControlCell cell;
        cell.start = cj.at("start");
        for (const auto& bj : cj.at("branches"))
            cell.branches.push_back({predicate_from_json(bj.at("when")),
                                     volatility_from_json(bj.at("alpha")),
                                     jump_map_from_json(bj.at("beta"))});
        cells.push_back(std::move(cell));
    }
    return ControlSpec::from_cells(std::move(cells), j.at("horizon"), std::move(name));
}

inline ordered_json params_to_json(const std::map<std::string, double>& params) {
    ordered_json j = ordered_json::object();
    for (const auto& [k, v] : params) j[k] = v;
    return j;
}

inline std::map<std::string, double> params_from_json(const ordered_json& j) {
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items()) out[k] = v.get<double>();
    return out;
}

}  // namespace cfg_detail

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["schema_version"] = c.schema_version;
    j["experiment"] = c.experiment;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["workers"] = c.workers;
    j["horizon"] = c.horizon;

    j["measures"] = ordered_json::array();
    for (const auto& [name, m] : c.measures) {
        ordered_json atoms = ordered_json::array();
        for (const auto& a : m.atoms()) atoms.push_back({a.location, a.intensity});
        j["measures"].push_back({{"name", name}, {"atoms", atoms}});
    }
    j["jump_maps"] = ordered_json::array();
    for (const auto& [name, m] : c.jump_maps) {
        ordered_json mj = cfg_detail::jump_map_to_json(m);
        mj["name"] = name;
        j["jump_maps"].push_back(mj);
    }
    j["controls"] = ordered_json::array();
    for (const auto& [name, ctl] : c.controls) {
        ordered_json cj = cfg_detail::control_to_json(ctl);
        cj["name"] = name;
        j["controls"].push_back(cj);
    }
    j["control_family"] = c.control_family;
    j["base_measure"] = c.base_measure;
    j["lr_against"] = c.lr_against;
    j["generator"] = {{"name", c.generator.name},
                      {"params", cfg_detail::params_to_json(c.generator.params)},
                      {"nu_star", c.generator.nu_star}};
    j["payoff"] = {{"name", c.payoff.name},
                   {"params", cfg_detail::params_to_json(c.payoff.params)}};
    j["control_grid"] = ordered_json::array();
    for (const auto& [a, m] : c.control_grid)
        j["control_grid"].push_back({{"a", a}, {"measure", m}});
    j["lattice"] = {{"x_lo", c.lattice.x_lo},         {"x_hi", c.lattice.x_hi},
                    {"n_x", c.lattice.n_x},           {"n_t", c.lattice.n_t},
                    {"boundary", c.lattice.boundary}, {"csv_time_slices", c.lattice.csv_time_slices}};
    j["paths"] = {{"n_paths", c.paths.n_paths}, {"n_steps", c.paths.n_steps}};
    j["mc_basis_degree"] = c.mc_basis_degree;
    j["qv_window"] = c.qv_window;
    j["tolerances"] = {{"k_tolerance_scale", c.tolerances.k_tolerance_scale},
                       {"step_tolerance", c.tolerances.step_tolerance},
                       {"lattice_tolerance", c.tolerances.lattice_tolerance}};
    j["inequality_cases"] = ordered_json::array();
    for (const auto& [n, d] : c.inequality_cases) j["inequality_cases"].push_back({n, d});
    j["appendix"] = {{"sigma", c.appendix_sigma},
                     {"measure", c.appendix_measure},
                     {"delta", c.appendix_delta},
                     {"lambda", c.appendix_lambda}};
    j["convergence"] = {{"target", c.convergence_target}, {"levels", c.convergence_levels}};
    if (c.reference_value) j["convergence"]["reference_value"] = *c.reference_value;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::ordered_json& j) {
    ExperimentConfig c;
    try {
        c.schema_version = j.at("schema_version");
        if (c.schema_version != kSchemaVersion)
            throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version));
        c.experiment = j.at("experiment");
        if (!j.contains("seed")) throw ConfigError("seed is mandatory");
        c.seed = j.at("seed");
        c.out_dir = j.value("out_dir", std::string{"out"});
        c.workers = j.value("workers", 0);
        c.horizon = j.value("horizon", 1.0);

        for (const auto& mj : j.value("measures", nlohmann::ordered_json::array())) {
            std::vector<LevyAtom> atoms;
            for (const auto& a : mj.at("atoms")) atoms.push_back({a.at(0), a.at(1)});
            const std::string name = mj.at("name");
            c.measures.emplace_back(name, LevyBaseMeasure::make(std::move(atoms), name));
        }
        for (const auto& mj : j.value("jump_maps", nlohmann::ordered_json::array()))
            c.jump_maps.emplace_back(mj.at("name"), cfg_detail::jump_map_from_json(mj));
        for (const auto& cj : j.value("controls", nlohmann::ordered_json::array())) {
            const std::string name = cj.at("name");
            c.controls.emplace_back(name, cfg_detail::control_from_json(cj, name));
        }
        c.control_family = j.value("control_family", std::vector<std::string>{});
        c.base_measure = j.value("base_measure", std::string{});
        c.lr_against = j.value("lr_against", std::string{});
        if (j.contains("generator")) {
            c.generator.name = j["generator"].value("name", std::string{"zero"});
            if (j["generator"].contains("params"))
                c.generator.params = cfg_detail::params_from_json(j["generator"]["params"]);
            c.generator.nu_star = j["generator"].value("nu_star", std::string{});
        }
        if (j.contains("payoff")) {
            c.payoff.name = j["payoff"].value("name", std::string{"square"});
            if (j["payoff"].contains("params"))
                c.payoff.params = cfg_detail::params_from_json(j["payoff"]["params"]);
        }
        for (const auto& gj : j.value("control_grid", nlohmann::ordered_json::array()))
            c.control_grid.emplace_back(gj.at("a"), gj.at("measure"));
        if (j.contains("lattice")) {
            const auto& lj = j["lattice"];
            c.lattice.x_lo = lj.value("x_lo", c.lattice.x_lo);
            c.lattice.x_hi = lj.value("x_hi", c.lattice.x_hi);
            c.lattice.n_x = lj.value("n_x", c.lattice.n_x);
            c.lattice.n_t = lj.value("n_t", c.lattice.n_t);
            c.lattice.boundary = lj.value("boundary", c.lattice.boundary);
            c.lattice.csv_time_slices = lj.value("csv_time_slices", c.lattice.csv_time_slices);
            if (c.lattice.boundary != "dirichlet" && c.lattice.boundary != "extrapolate")
                throw ConfigError("boundary must be 'dirichlet' or 'extrapolate'");
        }
        if (j.contains("paths")) {
            c.paths.n_paths = j["paths"].value("n_paths", c.paths.n_paths);
            c.paths.n_steps = j["paths"].value("n_steps", c.paths.n_steps);
        }
        c.mc_basis_degree = j.value("mc_basis_degree", 4);
        c.qv_window = j.value("qv_window", 50);
        if (j.contains("tolerances")) {
            const auto& tj = j["tolerances"];
            c.tolerances.k_tolerance_scale =
                tj.value("k_tolerance_scale", c.tolerances.k_tolerance_scale);
            c.tolerances.step_tolerance = tj.value("step_tolerance", c.tolerances.step_tolerance);
            c.tolerances.lattice_tolerance =
                tj.value("lattice_tolerance", c.tolerances.lattice_tolerance);
        }
        if (j.contains("inequality_cases")) {
            c.inequality_cases.clear();
            for (const auto& e : j["inequality_cases"])
                c.inequality_cases.emplace_back(e.at(0), e.at(1));
        }
        if (j.contains("appendix")) {
            const auto& aj = j["appendix"];
            c.appendix_sigma = aj.value("sigma", c.appendix_sigma);
            c.appendix_measure = aj.value("measure", std::string{});
            c.appendix_delta = aj.value("delta", c.appendix_delta);
            c.appendix_lambda = aj.value("lambda", c.appendix_lambda);
        }
        if (j.contains("convergence")) {
            const auto& vj = j["convergence"];
            c.convergence_target = vj.value("target", c.convergence_target);
            c.convergence_levels = vj.value("levels", c.convergence_levels);
            if (vj.contains("reference_value"))
                c.reference_value = vj["reference_value"].get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(e.what());
    }

    // referenced names must resolve
    for (const auto& name : c.control_family) c.control(name);
    if (!c.base_measure.empty()) c.measure(c.base_measure);
    if (!c.lr_against.empty()) c.measure(c.lr_against);
    if (!c.generator.nu_star.empty()) c.measure(c.generator.nu_star);
    for (const auto& [a, m] : c.control_grid) {
        if (!(a > 0.0)) throw ConfigError("control grid volatilities must be positive");
        c.measure(m);
    }
    if (!c.appendix_measure.empty()) c.measure(c.appendix_measure);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string{"parse error: "} + e.what());
    }
    return config_from_json(j);
}

// Hash of the experiment identity: worker count and output location do not
// change any result, so they are excluded.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    nlohmann::ordered_json j = to_json(c);
    j.erase("workers");
    j.erase("out_dir");
    return fnv1a(j.dump());
}

// --- materialization helpers ------------------------------------------------

inline TerminalFn make_terminal(const PayoffChoice& p) {
    auto get = [&p](const std::string& k, double fallback) {
        const auto it = p.params.find(k);
        return it == p.params.end() ? fallback : it->second;
    };
    if (p.name == "square") return [](double x) { return x * x; };
    if (p.name == "identity") return [](double x) { return x; };
    if (p.name == "abs") return [](double x) { return std::abs(x); };
    if (p.name == "constant") {
        const double v = get("value", 1.0);
        return [v](double) { return v; };
    }
    if (p.name == "call") {
        const double k = get("strike", 0.0);
        return [k](double x) { return std::max(x - k, 0.0); };
    }
    if (p.name == "butterfly") {
        const double k1 = get("k1", -1.0), k2 = get("k2", 0.0), k3 = get("k3", 1.0);
        return [k1, k2, k3](double x) {
            auto c = [](double y, double k) { return std::max(y - k, 0.0); };
            return c(x, k1) - 2.0 * c(x, k2) + c(x, k3);
        };
    }
    throw ConfigError("unknown payoff '" + p.name + "'");
}

inline GeneratorSpec make_generator(const ExperimentConfig& c) {
    GeneratorParams params;
    params.num = c.generator.params;
    const std::string nu_name =
        !c.generator.nu_star.empty() ? c.generator.nu_star : c.base_measure;
    if (!nu_name.empty()) params.nu_star = c.measure(nu_name);
    return GeneratorRegistry::instance().make(c.generator.name, params);
}

inline PideGrid make_pide_grid(const ExperimentConfig& c) {
    PideGrid g;
    g.x_lo = c.lattice.x_lo;
    g.x_hi = c.lattice.x_hi;
    g.n_x = c.lattice.n_x;
    g.n_t = c.lattice.n_t;
    g.horizon = c.horizon;
    g.boundary = c.lattice.boundary == "extrapolate" ? PideGrid::Boundary::LinearExtrapolation
                                                     : PideGrid::Boundary::DirichletTerminal;
    return g;
}

inline std::vector<LatticeControl> make_control_grid(const ExperimentConfig& c) {
    std::vector<LatticeControl> g;
    for (const auto& [a, m] : c.control_grid) g.push_back({a, c.measure(m)});
    return g;
}

}  // namespace jbsde

#endif  // JBSDE_CONFIG_HPP

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expansion.hpp"
#include "field.hpp"
#include "model.hpp"
#include "oracle.hpp"

namespace smre {

using nlohmann::json;

/// Largest supported expansion order.
inline constexpr int max_order = 3;

struct OracleConfig {
    OracleMethod method = OracleMethod::direct;
    long long n_samples = 100000;
    std::uint64_t seed = 1;
    double h_s = 2e-2;
    int workers = 0;
    int u_stride = 1;
};

struct OutputConfig {
    std::string directory = "out";
    int stride_u = 1;
    int stride_t = 1;
    int stride_tau = 10;
};

/// Parsed run document.
struct RunConfig {
    std::vector<std::string> states;
    Eigen::MatrixXd P;
    std::vector<SojournDistribution> sojourns;
    std::vector<StateVelocity> velocities;
    TestFunction phi = Gaussian{};
    UGrid grid;
    ExpansionOptions expansion;
    std::vector<double> epsilons{0.2, 0.1, 0.05, 0.025};
    OracleConfig oracle;
    OutputConfig output;

    SemiMarkovModel model() const { return SemiMarkovModel(states, P, sojourns); }
    VelocityField field() const { return VelocityField(grid, velocities, expansion.h_t / 4.0); }
};

namespace detail {

inline const json& require(const json& j, const std::string& key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing required field '" + key + "'");
    return j.at(key);
}

inline double get_number(const json& j, const std::string& key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_number()) throw ConfigError(where + "/" + key + ": expected a number");
    return v.get<double>();
}

inline double get_number_or(const json& j, const std::string& key, double def, const std::string& where) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return def;
    if (!j.at(key).is_number()) throw ConfigError(where + "/" + key + ": expected a number");
    return j.at(key).get<double>();
}

inline int get_int_or(const json& j, const std::string& key, int def, const std::string& where) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return def;
    if (!j.at(key).is_number_integer()) throw ConfigError(where + "/" + key + ": expected an integer");
    return j.at(key).get<int>();
}

inline std::string get_string(const json& j, const std::string& key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_string()) throw ConfigError(where + "/" + key + ": expected a string");
    return v.get<std::string>();
}

inline SojournDistribution parse_sojourn(const json& j, const std::string& where) {
    const std::string fam = get_string(j, "family", where);
    try {
        if (fam == "exponential") return SojournDistribution::exponential(get_number(j, "rate", where));
        if (fam == "erlang") {
            const json& s = require(j, "shape", where);
            if (!s.is_number_integer()) throw ConfigError(where + "/shape: expected an integer");
            return SojournDistribution::erlang(s.get<int>(), get_number(j, "rate", where));
        }
        if (fam == "uniform") return SojournDistribution::uniform(get_number(j, "a", where), get_number(j, "b", where));
    } catch (const DomainError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    throw ConfigError(where + "/family: unknown sojourn family '" + fam + "'");
}

inline StateVelocity parse_velocity(const json& j, const std::string& where, int n_points) {
    const std::string type = get_string(j, "type", where);
    if (type == "constant") return ConstantVelocity{get_number(j, "v", where)};
    if (type == "linear") return LinearVelocity{get_number(j, "a", where), get_number(j, "b", where)};
    if (type == "tabulated") {
        const json& v = require(j, "values", where);
        if (!v.is_array() || static_cast<int>(v.size()) != n_points)
            throw ConfigError(where + "/values: expected an array with one value per grid node");
        TabulatedVelocity t;
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError(where + "/values: expected numbers");
            t.values.push_back(e.get<double>());
        }
        return t;
    }
    throw ConfigError(where + "/type: unknown velocity type '" + type + "'");
}

inline TestFunction parse_test_function(const json& j, const std::string& where) {
    const std::string type = get_string(j, "type", where);
    const double c = get_number_or(j, "center", 0.0, where);
    const double w = get_number_or(j, "width", 1.0, where);
    if (!(w > 0.0)) throw ConfigError(where + "/width: must be positive");
    if (type == "gaussian") return Gaussian{c, w};
    const int p = get_int_or(j, "power", 8, where);
    if (p < 1) throw ConfigError(where + "/power: must be >= 1");
    if (type == "cosine_bump") return CosineBump{c, w, p};
    if (type == "polynomial_bump") return PolynomialBump{c, w, p};
    throw ConfigError(where + "/type: unknown test function '" + type + "'");
}

} // namespace detail

inline RunConfig parse_config(const json& doc) {
    using namespace detail;
    if (!doc.is_object()) throw ConfigError("/: expected a JSON object");
    RunConfig cfg;

    const json& m = require(doc, "model", "");
    const json& st = require(m, "states", "/model");
    if (!st.is_array() || st.empty()) throw ConfigError("/model/states: expected a nonempty array of labels");
    for (const auto& s : st) {
        if (!s.is_string()) throw ConfigError("/model/states: labels must be strings");
        cfg.states.push_back(s.get<std::string>());
    }
    const int n = static_cast<int>(cfg.states.size());
    const json& P = require(m, "P", "/model");
    if (!P.is_array() || static_cast<int>(P.size()) != n) throw ConfigError("/model/P: expected " + std::to_string(n) + " rows");
    cfg.P.resize(n, n);
    for (int x = 0; x < n; ++x) {
        const json& row = P[static_cast<std::size_t>(x)];
        if (!row.is_array() || static_cast<int>(row.size()) != n)
            throw ConfigError("/model/P/" + std::to_string(x) + ": expected " + std::to_string(n) + " entries");
        for (int y = 0; y < n; ++y) {
            if (!row[static_cast<std::size_t>(y)].is_number()) throw ConfigError("/model/P/" + std::to_string(x) + ": expected numbers");
            cfg.P(x, y) = row[static_cast<std::size_t>(y)].get<double>();
        }
    }
    const json& so = require(m, "sojourns", "/model");
    if (!so.is_array() || static_cast<int>(so.size()) != n) throw ConfigError("/model/sojourns: expected one entry per state");
    for (int x = 0; x < n; ++x) cfg.sojourns.push_back(parse_sojourn(so[static_cast<std::size_t>(x)], "/model/sojourns/" + std::to_string(x)));

    const json gj = doc.value("grid", json::object());
    const std::string mode = gj.value("boundary_mode", std::string("extrapolate"));
    if (mode != "extrapolate" && mode != "periodic") throw ConfigError("/grid/boundary_mode: expected 'extrapolate' or 'periodic'");
    cfg.grid = UGrid::make(get_number_or(gj, "u_min", -8.0, "/grid"), get_number_or(gj, "u_max", 8.0, "/grid"),
                           get_int_or(gj, "n_points", 257, "/grid"),
                           mode == "periodic" ? BoundaryMode::periodic : BoundaryMode::extrapolate,
                           get_number_or(gj, "margin", -1.0, "/grid"));

    const json& f = require(doc, "field", "");
    const json& vel = require(f, "velocities", "/field");
    if (!vel.is_array() || static_cast<int>(vel.size()) != n) throw ConfigError("/field/velocities: expected one entry per state");
    for (int x = 0; x < n; ++x)
        cfg.velocities.push_back(parse_velocity(vel[static_cast<std::size_t>(x)], "/field/velocities/" + std::to_string(x), cfg.grid.n_points));

    if (doc.contains("test_function")) cfg.phi = parse_test_function(doc.at("test_function"), "/test_function");

    const json tj = doc.value("time", json::object());
    cfg.expansion.horizon = get_number_or(tj, "T", 1.0, "/time");
    cfg.expansion.h_t = get_number_or(tj, "h_t", 1e-2 * cfg.expansion.horizon, "/time");
    cfg.expansion.pad = get_int_or(tj, "pad", -1, "/time");
    if (!(cfg.expansion.horizon > 0.0) || !(cfg.expansion.h_t > 0.0)) throw ConfigError("/time: T and h_t must be positive");

    const json lj = doc.value("layer", json::object());
    cfg.expansion.h_tau = get_number_or(lj, "h_tau", 1e-2, "/layer");
    cfg.expansion.tau_max = get_number_or(lj, "tau_max", 0.0, "/layer");
    if (!(cfg.expansion.h_tau > 0.0)) throw ConfigError("/layer/h_tau: must be positive");

    cfg.expansion.order = get_int_or(doc, "order", 2, "");
    if (cfg.expansion.order < 1 || cfg.expansion.order > max_order) throw ConfigError("/order: expected 1.." + std::to_string(max_order));

    if (doc.contains("epsilons")) {
        const json& e = doc.at("epsilons");
        if (!e.is_array() || e.empty()) throw ConfigError("/epsilons: expected a nonempty array");
        cfg.epsilons.clear();
        for (const auto& v : e) {
            if (!v.is_number()) throw ConfigError("/epsilons: expected numbers");
            const double x = v.get<double>();
            if (!(x > 0.0 && x < 1.0)) throw ConfigError("/epsilons: values must lie in (0, 1)");
            cfg.epsilons.push_back(x);
        }
    }

    const json oj = doc.value("oracle", json::object());
    const std::string meth = oj.value("method", std::string("direct"));
    if (meth != "direct" && meth != "mc") throw ConfigError("/oracle/method: expected 'mc' or 'direct'");
    cfg.oracle.method = meth == "mc" ? OracleMethod::monte_carlo : OracleMethod::direct;
    if (oj.contains("n_samples")) {
        if (!oj.at("n_samples").is_number_integer()) throw ConfigError("/oracle/n_samples: expected an integer");
        cfg.oracle.n_samples = oj.at("n_samples").get<long long>();
        if (cfg.oracle.n_samples < 1000) throw ConfigError("/oracle/n_samples: at least 1000 samples are required");
    }
    if (oj.contains("seed")) {
        if (!oj.at("seed").is_number_unsigned()) throw ConfigError("/oracle/seed: expected a nonnegative integer");
        cfg.oracle.seed = oj.at("seed").get<std::uint64_t>();
    }
    cfg.oracle.h_s = get_number_or(oj, "h_s", cfg.expansion.h_tau, "/oracle");
    cfg.oracle.workers = get_int_or(oj, "workers", 0, "/oracle");
    cfg.oracle.u_stride = get_int_or(oj, "u_stride", 1, "/oracle");
    if (!(cfg.oracle.h_s > 0.0) || cfg.oracle.u_stride < 1 || cfg.oracle.workers < 0) throw ConfigError("/oracle: invalid solver settings");

    const json outj = doc.value("output", json::object());
    cfg.output.directory = outj.value("directory", std::string("out"));
    cfg.output.stride_u = get_int_or(outj, "stride_u", 1, "/output");
    cfg.output.stride_t = get_int_or(outj, "stride_t", 1, "/output");
    cfg.output.stride_tau = get_int_or(outj, "stride_tau", 10, "/output");
    if (cfg.output.stride_u < 1 || cfg.output.stride_t < 1 || cfg.output.stride_tau < 1) throw ConfigError("/output: strides must be >= 1");
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(doc);
}

} // namespace smre

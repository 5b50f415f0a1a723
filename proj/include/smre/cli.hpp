#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "config.hpp"
#include "expansion.hpp"
#include "oracle.hpp"
#include "remainder.hpp"

namespace smre {

using ordered_json = nlohmann::ordered_json;

enum ExitCode : int { exit_ok = 0, exit_domain = 1, exit_usage = 2 };

/// Command-line overrides applied on top of the config document.
struct CliOverrides {
    std::optional<std::string> out;
    std::optional<int> order;
    std::vector<double> epsilons;
    std::optional<std::string> oracle;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
};

inline void apply_overrides(RunConfig& cfg, const CliOverrides& o) {
    if (o.out) cfg.output.directory = *o.out;
    if (o.order) {
        if (*o.order < 1 || *o.order > max_order) throw ConfigError("--order: expected 1.." + std::to_string(max_order));
        cfg.expansion.order = *o.order;
    }
    if (!o.epsilons.empty()) {
        for (double e : o.epsilons)
            if (!(e > 0.0 && e < 1.0)) throw ConfigError("--epsilon: values must lie in (0, 1)");
        cfg.epsilons = o.epsilons;
    }
    if (o.oracle) {
        if (*o.oracle != "mc" && *o.oracle != "direct") throw ConfigError("--oracle: expected 'mc' or 'direct'");
        cfg.oracle.method = *o.oracle == "mc" ? OracleMethod::monte_carlo : OracleMethod::direct;
    }
    if (o.seed) cfg.oracle.seed = *o.seed;
    if (o.workers) {
        if (*o.workers < 0) throw ConfigError("--workers: must be >= 0");
        cfg.oracle.workers = *o.workers;
    }
}

namespace detail {

inline ordered_json vector_json(const Eigen::VectorXd& v) {
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline ordered_json matrix_json(const Eigen::MatrixXd& m) {
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
    return a;
}

/// NaN and infinities become null.
inline ordered_json number_json(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

inline ordered_json validation_json(const ModelDiagnostics& d) {
    ordered_json j;
    j["usable"] = d.usable();
    j["row_sum_errors"] = d.row_sum_errors;
    j["nonnegative"] = d.nonnegative;
    j["irreducible"] = d.irreducible;
    j["aperiodic"] = d.aperiodic;
    j["period"] = d.period;
    ordered_json cm = ordered_json::array();
    for (double c : d.cramer_margin) cm.push_back(number_json(c));
    j["cramer_margin"] = cm;
    j["spectral_gap"] = d.spectral_gap;
    j["issues"] = d.issues;
    return j;
}

inline ordered_json model_json(const SemiMarkovModel& model) {
    ordered_json j;
    j["states"] = model.states();
    j["P"] = matrix_json(model.P());
    ordered_json so = ordered_json::array();
    for (const auto& d : model.sojourns()) so.push_back(d.describe());
    j["sojourns"] = so;
    return j;
}

inline ordered_json grids_json(const RunConfig& cfg, const TimeGrid* tg, const TauGrid* sg) {
    ordered_json j;
    j["u"] = {{"u_min", cfg.grid.u_min},
              {"u_max", cfg.grid.u_max},
              {"n_points", cfg.grid.n_points},
              {"spacing", cfg.grid.spacing()},
              {"boundary_mode", cfg.grid.mode == BoundaryMode::periodic ? "periodic" : "extrapolate"},
              {"margin", cfg.grid.margin}};
    if (tg) j["t"] = {{"T", tg->horizon()}, {"h_t", tg->h}, {"n_steps", tg->n_steps}, {"pad", tg->pad}};
    if (sg) j["tau"] = {{"h_tau", sg->h}, {"n", sg->n}, {"tau_max", sg->tau_max()}};
    j["output_strides"] = {{"u", cfg.output.stride_u}, {"t", cfg.output.stride_t}, {"tau", cfg.output.stride_tau}};
    return j;
}

inline ordered_json expansion_json(const ExpansionResult& r) {
    const OperatorSet& ops = r.ops;
    ordered_json j;
    j["order"] = r.regular.order;
    j["rho"] = vector_json(ops.rho());
    j["pi"] = vector_json(ops.pi());
    j["m_hat"] = ops.m_hat();
    j["Q"] = matrix_json(ops.Q());
    j["R0"] = matrix_json(ops.potential().R0);
    const int n = ops.n_states();
    ordered_json nu = ordered_json::array();
    for (int k = 1; k <= r.regular.order + 1; ++k) {
        Eigen::VectorXd v(n);
        for (int x = 0; x < n; ++x) v(x) = nu_coefficient(ops.model().sojourn(x), k);
        nu.push_back(vector_json(v));
    }
    j["nu"] = nu;
    j["potential_condition"] = ops.potential().condition;
    j["solvability_residual"] = r.solvability_residual;
    ordered_json orders = ordered_json::array();
    for (std::size_t i = 0; i < r.orders.size(); ++i) {
        const OrderDiagnostics& od = r.orders[i];
        const SingularOrder& so = r.singular.terms[i];
        ordered_json o;
        o["k"] = od.k;
        o["system_residual"] = od.system_residual;
        o["range_defect"] = od.range_defect;
        o["source_consistency"] = od.source_consistency;
        o["ck0_sup"] = od.ck0_sup;
        o["ck0_nu_form_sup"] = od.ck0_nu_form_sup;
        o["ck0_alt_normalization_sup"] = od.ck0_alt_normalization_sup;
        o["ck0_nu_form_gap"] = od.ck0_nu_form_gap;
        o["U_sup"] = od.U_sup;
        o["W_sup"] = od.W_sup;
        o["tau0_consistency"] = so.tau0_consistency;
        o["tau0_consistency_no_factorial"] = so.tau0_consistency_no_factorial;
        o["regularity"] = so.regularity;
        o["regularity_pinned"] = so.regularity_pinned;
        o["complement_pinned"] = so.complement_pinned;
        o["pinned_sum"] = so.pinned_sum;
        o["renewal_limit_defect"] = so.renewal_limit_defect;
        o["decay_ratio"] = number_json(so.decay_ratio);
        o["tail_monotone"] = so.tail_monotone;
        o["tail_violation_tau"] = so.tail_violation_tau;
        o["largest_slack_state"] = ops.model().states()[static_cast<std::size_t>(so.largest_slack_state)];
        orders.push_back(o);
    }
    j["orders"] = orders;
    return j;
}

inline ordered_json adjudication_json(const Adjudication& a) {
    ordered_json j;
    j["lk_form"] = {{"binomial_probe", a.binomial_probe}, {"literal_probe", a.literal_probe}, {"verdict", a.lk_verdict}};
    j["factorials"] = {{"with_factorial", a.factorial_residual},
                       {"without_factorial", a.no_factorial_residual},
                       {"verdict", a.factorial_verdict}};
    j["pi_normalization"] = {{"normalized_c1_sup", a.pi_normalized_c1},
                             {"unnormalized_c1_sup", a.pi_unnormalized_c1},
                             {"verdict", a.pi_verdict}};
    return j;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DomainError("cannot write '" + p.string() + "'");
    f << s;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DomainError("missing input '" + p.string() + "'");
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

inline void write_json(const std::filesystem::path& p, const ordered_json& j) { write_text(p, j.dump(2) + "\n"); }

/// One CSV row per (time, state, node) with the shared header.
inline void write_series_csv(const std::filesystem::path& p, const std::string& quantity, int k, const char* time_label,
                             const std::vector<std::pair<double, const GridFunction*>>& frames,
                             const std::vector<std::string>& states, int stride_u) {
    std::ostringstream s;
    s << "quantity,k," << time_label << ",state,u,value\n";
    for (const auto& [t, f] : frames) {
        const UGrid& g = f->grid();
        for (int x = 0; x < f->n_states(); ++x)
            for (int i = 0; i < g.n_points; i += stride_u)
                s << quantity << ',' << k << ',' << detail::fmt_double(t) << ',' << states[static_cast<std::size_t>(x)] << ','
                  << detail::fmt_double(g.node(i)) << ',' << detail::fmt_double((*f)(x, i)) << '\n';
    }
    write_text(p, s.str());
}

inline std::vector<std::pair<double, const GridFunction*>> regular_frames(const TimeSeries& s, int stride) {
    std::vector<std::pair<double, const GridFunction*>> out;
    const TimeGrid& g = s.grid;
    for (int t = g.zero_index(); t <= g.end_index(); t += stride) out.emplace_back(g.time(t), &s[t]);
    if ((g.end_index() - g.zero_index()) % stride != 0) out.emplace_back(g.time(g.end_index()), &s[g.end_index()]);
    return out;
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw DomainError("cannot create output directory '" + dir + "': " + ec.message());
    return p;
}

inline std::vector<double> compare_times(const RunConfig& cfg) {
    return {0.5 * cfg.expansion.horizon, cfg.expansion.horizon};
}

} // namespace detail

/// Parses the config and prints the model diagnostics. Exit 0 iff the model is usable.
inline int cmd_validate(const RunConfig& cfg, std::ostream& out) {
    const SemiMarkovModel model = cfg.model();
    const ModelDiagnostics d = validate_model(model);
    ordered_json j;
    j["model"] = detail::model_json(model);
    j["validation"] = detail::validation_json(d);
    out << j.dump(2) << "\n";
    for (const auto& issue : d.issues) out << "invalid: " << issue << "\n";
    return d.usable() ? exit_ok : exit_domain;
}

inline ExpansionResult expand_checked(const RunConfig& cfg, const SemiMarkovModel& model) {
    const ModelDiagnostics d = validate_model(model);
    if (!d.usable()) {
        std::string msg = "model is not usable:";
        for (const auto& i : d.issues) msg += " " + i + ";";
        throw DomainError(msg);
    }
    return build_expansion(model, cfg.field(), cfg.phi, cfg.expansion);
}

/// Builds the expansion and writes the series CSVs and diagnostics.json.
inline int cmd_expand(const RunConfig& cfg, std::ostream& out) {
    const auto dir = detail::prepare_dir(cfg.output.directory);
    const SemiMarkovModel model = cfg.model();
    ordered_json diag;
    diag["model"] = detail::model_json(model);
    diag["validation"] = detail::validation_json(validate_model(model));
    try {
        const ExpansionResult r = expand_checked(cfg, model);
        diag["grids"] = detail::grids_json(cfg, &r.regular.grid, &r.singular.grid);
        diag["expansion"] = detail::expansion_json(r);
        diag["adjudication"] = detail::adjudication_json(r.adjudication);
        const auto& states = model.states();
        for (int k = 0; k <= r.regular.order; ++k) {
            const auto ks = std::to_string(k);
            detail::write_series_csv(dir / ("c_" + ks + ".csv"), "c", k, "t",
                                     detail::regular_frames(r.regular.c[static_cast<std::size_t>(k)], cfg.output.stride_t), states,
                                     cfg.output.stride_u);
            detail::write_series_csv(dir / ("U_" + ks + ".csv"), "U", k, "t",
                                     detail::regular_frames(r.regular.U[static_cast<std::size_t>(k)], cfg.output.stride_t), states,
                                     cfg.output.stride_u);
            if (k == 0) continue;
            std::vector<std::pair<double, const GridFunction*>> frames;
            const auto& W = r.singular.at(k).W;
            const TauGrid& sg = r.singular.grid;
            for (int j = 0; j <= sg.n; j += cfg.output.stride_tau) frames.emplace_back(sg.tau(j), &W[static_cast<std::size_t>(j)]);
            if (sg.n % cfg.output.stride_tau != 0) frames.emplace_back(sg.tau_max(), &W.back());
            detail::write_series_csv(dir / ("W_" + ks + ".csv"), "W", k, "tau", frames, states, cfg.output.stride_u);
        }
        diag["status"] = "ok";
        detail::write_json(dir / "diagnostics.json", diag);
        out << "expansion of order " << r.regular.order << " written to " << dir.string() << "\n";
        return exit_ok;
    } catch (const Error& e) {
        diag["grids"] = detail::grids_json(cfg, nullptr, nullptr);
        diag["status"] = "failed";
        diag["error"] = e.what();
        detail::write_json(dir / "diagnostics.json", diag);
        throw;
    }
}

/// Evaluates the remainder against the configured oracle at t* ∈ {T/2, T} and fits slopes.
inline int cmd_compare(const RunConfig& cfg, std::ostream& out) {
    const auto dir = detail::prepare_dir(cfg.output.directory);
    const SemiMarkovModel model = cfg.model();
    const ExpansionResult r = expand_checked(cfg, model);
    const VelocityField field = cfg.field();
    const auto times = detail::compare_times(cfg);
    RemainderReport rep;
    if (cfg.oracle.method == OracleMethod::direct) {
        DirectOptions o;
        o.h_s = cfg.oracle.h_s;
        rep = compute_remainder(r, cfg.epsilons, times, OracleMethod::direct, [&](double eps, const std::vector<double>& ts) {
            return direct_solve_phi(model, field, cfg.phi, ts, eps, o);
        });
    } else {
        MonteCarloOptions o;
        o.n_samples = cfg.oracle.n_samples;
        o.seed = cfg.oracle.seed;
        o.workers = cfg.oracle.workers;
        o.u_stride = cfg.oracle.u_stride;
        rep = compute_remainder(r, cfg.epsilons, times, OracleMethod::monte_carlo, [&](double eps, const std::vector<double>& ts) {
            std::vector<OracleEstimate> v;
            for (double t : ts) v.push_back(mc_expectation(model, field, cfg.phi, t, eps, o));
            return v;
        });
    }

    std::ostringstream csv, plot;
    csv << "eps,t,order,error,noise_floor,included\n";
    plot << "log_eps,log_error,order,t\n";
    for (const auto& p : rep.points) {
        csv << detail::fmt_double(p.eps) << ',' << detail::fmt_double(p.t) << ',' << p.order << ',' << detail::fmt_double(p.error) << ','
            << detail::fmt_double(p.noise_floor) << ',' << (p.included ? 1 : 0) << '\n';
        if (p.error > 0.0)
            plot << detail::fmt_double(std::log(p.eps)) << ',' << detail::fmt_double(std::log(p.error)) << ',' << p.order << ',' << detail::fmt_double(p.t) << '\n';
    }
    detail::write_text(dir / "remainder.csv", csv.str());
    detail::write_text(dir / "plot_data.csv", plot.str());

    ordered_json j;
    j["oracle"] = {{"method", to_string(rep.method)}, {"h_s", cfg.oracle.h_s}, {"n_samples", cfg.oracle.n_samples}, {"seed", cfg.oracle.seed}};
    j["epsilons"] = cfg.epsilons;
    j["times"] = times;
    ordered_json fits = ordered_json::array();
    for (const auto& f : rep.fits) {
        fits.push_back({{"order", f.order},
                        {"t", f.t},
                        {"slope", detail::number_json(f.slope)},
                        {"intercept", detail::number_json(f.intercept)},
                        {"points", f.points},
                        {"status", f.status}});
        out << "N'=" << f.order << " t=" << detail::fmt_double(f.t) << " slope=" << (std::isnan(f.slope) ? f.status : detail::fmt_double(f.slope)) << "\n";
    }
    j["fits"] = fits;
    detail::write_json(dir / "remainder.json", j);
    return exit_ok;
}

/// Aggregates diagnostics.json and remainder.json into summary.txt without recomputing anything.
inline int cmd_report(const RunConfig& cfg, std::ostream& out) {
    const std::filesystem::path dir(cfg.output.directory);
    const auto diag = nlohmann::ordered_json::parse(detail::read_text(dir / "diagnostics.json"));
    const auto rem = nlohmann::ordered_json::parse(detail::read_text(dir / "remainder.json"));
    std::ostringstream s;
    auto num = [](const ordered_json& v) { return v.is_number() ? detail::fmt_double(v.get<double>()) : std::string("n/a"); };
    s << "model states:";
    for (const auto& st : diag["model"]["states"]) s << ' ' << st.get<std::string>();
    s << "\nstatus: " << diag.value("status", std::string("unknown")) << "\n";
    if (diag.contains("error")) s << "error: " << diag["error"].get<std::string>() << "\n";
    if (diag.contains("expansion")) {
        const auto& e = diag["expansion"];
        s << "m_hat: " << num(e["m_hat"]) << "\nsolvability residual: " << num(e["solvability_residual"]) << "\n\n";
        s << "k  system_residual  regularity  c_k(0)_sup  decay_ratio  tail_monotone\n";
        for (const auto& o : e["orders"])
            s << o["k"].get<int>() << "  " << num(o["system_residual"]) << "  " << num(o["regularity"]) << "  " << num(o["ck0_sup"])
              << "  " << num(o["decay_ratio"]) << "  " << (o["tail_monotone"].get<bool>() ? "yes" : "no") << "\n";
    }
    if (diag.contains("adjudication")) {
        const auto& a = diag["adjudication"];
        s << "\nadjudication\n";
        s << "  L_k form: " << a["lk_form"]["verdict"].get<std::string>() << "\n";
        s << "  factorials: " << a["factorials"]["verdict"].get<std::string>() << "\n";
        s << "  pi normalization: " << a["pi_normalization"]["verdict"].get<std::string>() << "\n";
    }
    s << "\nremainder slopes (oracle " << rem["oracle"]["method"].get<std::string>() << ")\n";
    s << "N'  t  slope  points  status\n";
    for (const auto& f : rem["fits"])
        s << f["order"].get<int>() << "  " << num(f["t"]) << "  " << num(f["slope"]) << "  " << f["points"].get<int>() << "  "
          << f["status"].get<std::string>() << "\n";
    detail::write_text(dir / "summary.txt", s.str());
    out << s.str();
    return exit_ok;
}

/// Entry point shared by the smre binary and the CLI tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Asymptotic expansion of semi-Markov random evolutions"};
    app.require_subcommand(1);
    std::string config_path;
    CliOverrides ov;
    std::string out_dir;
    int order = 0;
    std::string oracle;
    std::uint64_t seed = 0;
    int workers = 0;

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", config_path, "JSON run configuration")->required();
        c->add_option("--out", out_dir, "output directory");
    };
    auto* validate = app.add_subcommand("validate", "check the model and print diagnostics");
    add_common(validate);
    auto* expand = app.add_subcommand("expand", "build the expansion and write series plus diagnostics");
    add_common(expand);
    expand->add_option("--order", order, "expansion order N");
    auto* compare = app.add_subcommand("compare", "compare truncations against an oracle and fit slopes");
    add_common(compare);
    compare->add_option("--order", order, "expansion order N");
    compare->add_option("--epsilon", ov.epsilons, "epsilon values");
    compare->add_option("--oracle", oracle, "mc or direct");
    compare->add_option("--seed", seed, "Monte Carlo seed");
    compare->add_option("--workers", workers, "Monte Carlo worker threads (0 = all cores)");
    auto* report = app.add_subcommand("report", "summarize diagnostics and remainder files");
    add_common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        for (auto* c : {expand, compare}) {
            if (c->parsed() && c->count("--order")) ov.order = order;
        }
        if (compare->parsed()) {
            if (compare->count("--oracle")) ov.oracle = oracle;
            if (compare->count("--seed")) ov.seed = seed;
            if (compare->count("--workers")) ov.workers = workers;
        }
        for (auto* c : {validate, expand, compare, report})
            if (c->parsed() && c->count("--out")) ov.out = out_dir;
        RunConfig cfg = load_config(config_path);
        apply_overrides(cfg, ov);
        if (validate->parsed()) return cmd_validate(cfg, out);
        if (expand->parsed()) return cmd_expand(cfg, out);
        if (compare->parsed()) return cmd_compare(cfg, out);
        return cmd_report(cfg, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_usage;
    } catch (const DomainError& e) {
        err << "domain error: " << e.what() << "\n";
        return exit_domain;
    } catch (const nlohmann::json::exception& e) {
        err << "malformed input: " << e.what() << "\n";
        return exit_domain;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_domain;
    }
}

} // namespace smre

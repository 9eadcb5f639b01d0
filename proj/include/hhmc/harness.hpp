#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hhmc/adr.hpp"
#include "hhmc/coupling.hpp"
#include "hhmc/ergodic.hpp"
#include "hhmc/io.hpp"
#include "hhmc/kernel.hpp"
#include "hhmc/lyapunov.hpp"

namespace hhmc {

// ---------------------------------------------------------------------------
// configuration

inline Json default_config() {
    Json c;
    c["target"] = {{"kind", "gaussian"}, {"b", 1.0}, {"data", ""}};
    c["spectrum"] = {{"eigenvalues", {{"power_law", {{"c", 1.0}, {"p", 2.0}}}}},
                     {"dim", 16},
                     {"gamma", 0.0}};
    c["flow"] = {{"tol", 1e-10}, {"method", "rotation_splitting"}};
    c["kernel"] = {{"T", 0.2},   {"n_steps", 1000}, {"n_chains", 1},
                   {"seed", 1},  {"burn_in", 0},    {"thin", 1}};
    c["coupling"] = {{"N", 0},          {"variant", "linear"}, {"replicas", 1000},
                     {"n_max", 10},     {"epsilon", 0.0},      {"M_ball", 1.0},
                     {"window", 20}};
    c["lyapunov"] = {{"kind", "poly"}, {"i", 2}, {"eta", 0.0}, {"n_max", 5},
                     {"samples", 10000}};
    c["clt"] = {{"observable_coord", 0}, {"method", "autocov_sum"}};
    c["adr"] = {{"grid_n", 32},      {"kappa", 0.1},       {"dt", 0.02},
                {"t_star", 1.0},     {"prior", "power_law"}, {"prior_exponent", 6.0},
                {"prior_gamma", 0.25}, {"basis_dim", 32},   {"theta0", "blob"},
                {"noise_scale", 0.0}, {"obs_gamma", 0.01},
                {"data", "data.json"}, {"spectral_modes", 8}, {"obs_time", 0.5}};
    c["override_time_condition"] = false;
    c["output"] = "out";
    return c;
}

// Dotted-path override: "kernel.T=0.25" patches config["kernel"]["T"].
inline void apply_override(Json &config, const std::string &expr) {
    const auto eq = expr.find('=');
    if (eq == std::string::npos)
        throw ConfigInvalid("override must look like section.key=value: " + expr);
    std::string path = expr.substr(0, eq);
    const std::string value = expr.substr(eq + 1);
    Json *node = &config;
    std::size_t pos = 0;
    for (;;) {
        const auto dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot - pos);
        if (dot == std::string::npos) {
            Json parsed = Json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? Json(value) : parsed;
            return;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

inline Json load_config(const std::string &path,
                        const std::vector<std::string> &overrides) {
    Json config = default_config();
    if (!path.empty()) {
        Json user = Json::parse(read_file(path));
        config.merge_patch(user);
    }
    for (const auto &o : overrides)
        apply_override(config, o);
    // flow.T is accepted as an alias for the kernel integration time
    if (config.at("flow").contains("T"))
        config["kernel"]["T"] = config["flow"]["T"];
    return config;
}

// ---------------------------------------------------------------------------
// model construction

inline CovarianceSpectrum build_spectrum(const Json &config) {
    const Json &s = config.at("spectrum");
    const double gamma = s.at("gamma").get<double>();
    const Json &e = s.at("eigenvalues");
    if (e.contains("explicit"))
        return make_spectrum(e.at("explicit").get<std::vector<double>>(), gamma);
    const Json &pl = e.at("power_law");
    const double c = pl.at("c").get<double>(), p = pl.at("p").get<double>();
    const std::size_t dim = s.at("dim").get<std::size_t>();
    return make_spectrum(power_law_eigenvalues(c, p, dim), gamma, PowerLawTail{c, p});
}

struct AdrBundle {
    adr::TorusGrid grid;
    std::unique_ptr<adr::DivFreeBasis> basis;
    adr::Spec theta0;
    adr::ObservationSpec obs;
    std::vector<double> data;
    Field q_true;
    CovarianceSpectrum prior;
};

inline adr::Spec named_theta0(const adr::TorusGrid &g, const std::string &name) {
    adr::Fourier2D &fft = adr::workspace(g.n);
    adr::Real r(static_cast<std::size_t>(g.n) * g.n, 0.0);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const double x = i * g.dx(), y = j * g.dx();
            if (name == "cos_x")
                r[static_cast<std::size_t>(i) * g.n + j] = std::cos(x);
            else // "blob": a few low modes, mean-free
                r[static_cast<std::size_t>(i) * g.n + j] =
                    std::cos(x) + 0.5 * std::sin(2.0 * y) + 0.25 * std::cos(x + y) +
                    0.3 * std::sin(x - 2.0 * y);
        }
    adr::Spec out;
    fft.forward(r, out);
    return out;
}

// Spectral observation layout used by adr-gen: the first `spectral_modes`
// basis wavevectors observed at t = obs_time and at t_star.
inline adr::ObservationSpec default_observations(const adr::TorusGrid &g,
                                                 const adr::DivFreeBasis &basis,
                                                 int spectral_modes, double obs_time,
                                                 double gamma_noise) {
    adr::ObservationSpec obs;
    std::vector<std::pair<int, int>> seen;
    for (const adr::BasisMode &m : basis.modes()) {
        if (std::find(seen.begin(), seen.end(), std::make_pair(m.kx, m.ky)) !=
            seen.end())
            continue;
        seen.push_back({m.kx, m.ky});
        if (static_cast<int>(seen.size()) > spectral_modes)
            break;
        obs.spectral.push_back({m.kx, m.ky, obs_time});
        obs.spectral.push_back({m.kx, m.ky, g.t_star});
    }
    obs.gamma_diag.assign(obs.m(), gamma_noise);
    return obs;
}

inline Json observations_to_json(const adr::ObservationSpec &obs) {
    Json j;
    j["spectral"] = Json::array();
    for (const auto &e : obs.spectral)
        j["spectral"].push_back({{"kx", e.kx}, {"ky", e.ky}, {"t", e.t}});
    j["point"] = Json::array();
    for (const auto &e : obs.point)
        j["point"].push_back({{"x", e.x}, {"y", e.y}, {"t", e.t}});
    j["gamma_diag"] = obs.gamma_diag;
    return j;
}

inline adr::ObservationSpec observations_from_json(const Json &j) {
    adr::ObservationSpec obs;
    for (const auto &e : j.at("spectral"))
        obs.spectral.push_back({e.at("kx").get<int>(), e.at("ky").get<int>(),
                                e.at("t").get<double>()});
    for (const auto &e : j.at("point"))
        obs.point.push_back({e.at("x").get<double>(), e.at("y").get<double>(),
                             e.at("t").get<double>()});
    obs.gamma_diag = j.at("gamma_diag").get<std::vector<double>>();
    return obs;
}

inline AdrBundle load_adr_bundle(const std::string &data_path) {
    Json d = Json::parse(read_file(data_path));
    validate_json_keys(d, {"grid", "basis_dim", "prior", "observations", "theta0",
                           "y", "q_true", "noise_seed", "noise_scale"},
                       "data.json");
    AdrBundle b;
    const Json &gj = d.at("grid");
    b.grid = {gj.at("n").get<int>(), gj.at("kappa").get<double>(),
              gj.at("dt").get<double>(), gj.at("t_star").get<double>()};
    b.grid.validate();
    const std::size_t D = d.at("basis_dim").get<std::size_t>();
    b.basis = std::make_unique<adr::DivFreeBasis>(b.grid, D);
    b.theta0 = named_theta0(b.grid, d.at("theta0").get<std::string>());
    b.obs = observations_from_json(d.at("observations"));
    b.data = d.at("y").get<std::vector<double>>();
    b.q_true = d.at("q_true").get<std::vector<double>>();
    const Json &pj = d.at("prior");
    b.prior = adr::prior_spectrum_torus(
                  b.grid, pj.at("exponent").get<double>(), D,
                  pj.at("gamma").get<double>(),
                  pj.at("kind").get<std::string>() == "exponential"
                      ? adr::PriorKind::Exponential
                      : adr::PriorKind::PowerLaw)
                  .spectrum;
    return b;
}

// Declared constants for the ADR potential, measured by probes: L1 from
// random Hessian probes with margin, L2/L3 from the (B3)->(B2) route.
inline PotentialConstants probe_adr_constants(const CovarianceSpectrum &prior,
                                              const adr::AdrPotential &pot,
                                              Rng &rng, int n_probe = 6) {
    const double g = prior.gamma();
    double l1 = 0.0, l0 = 0.0;
    Field zero(prior.dim(), 0.0);
    Field g0 = pot.grad(zero);
    l0 = gamma_norm(prior, -g, g0); // |DU(0)|_{-gamma} = |C^g DU(0)|
    for (int p = 0; p < n_probe; ++p) {
        Field q = sample_gaussian(prior, rng);
        Field u = sample_gaussian(prior, rng), w = sample_gaussian(prior, rng);
        const double nu = gamma_norm(prior, 0.0, u), nw = gamma_norm(prior, 0.0, w);
        if (nu == 0.0 || nw == 0.0)
            continue;
        Field cu = fractional_apply(prior, g, scaled(1.0 / nu, u));
        Field cw = fractional_apply(prior, g, scaled(1.0 / nw, w));
        l1 = std::max(l1, std::abs(pot.hess_dir(q, cu, cw)));
    }
    l1 *= 2.0; // probe margin
    PotentialConstants k;
    k.L0 = l0;
    k.L1 = l1;
    // (B3) with L4 = L1, L5 = L0 implies (B2) with
    // L2 = (1 - lam1^{1-2g} L4)/2 when L4 < lam1^{2g-1}; fall back to a
    // small positive floor otherwise (the drift reports then carry it).
    const double lam1r = std::pow(prior.lambda1(), 1.0 - 2.0 * g);
    if (lam1r * l1 < 1.0) {
        k.L2 = 0.5 * (1.0 - lam1r * l1);
        const double l5 = lam1r * l0;
        k.L3 = l5 * l5 / (2.0 * (1.0 - lam1r * l1));
    } else {
        k.L2 = 0.05;
        k.L3 = 10.0;
    }
    return k;
}

// ---------------------------------------------------------------------------
// target construction for the non-ADR subcommands

struct TargetBundle {
    CovarianceSpectrum spectrum;
    std::unique_ptr<PotentialModel> potential;
    std::string kind;
};

inline TargetBundle build_target(const Json &config) {
    TargetBundle t;
    t.spectrum = build_spectrum(config);
    const Json &tj = config.at("target");
    t.kind = tj.at("kind").get<std::string>();
    if (t.kind == "gaussian") {
        t.potential = std::make_unique<ZeroPotential>();
    } else if (t.kind == "quadratic") {
        if (tj.contains("b_coeffs"))
            t.potential = std::make_unique<QuadraticPotential>(
                t.spectrum, tj.at("b_coeffs").get<std::vector<double>>());
        else
            t.potential = std::make_unique<QuadraticPotential>(
                t.spectrum, tj.at("b").get<double>());
    } else {
        throw ConfigInvalid("target.kind must be gaussian or quadratic here "
                            "(use adr-sample for adr targets)");
    }
    return t;
}

inline double kernel_time(const Json &config, const CovarianceSpectrum &spec,
                          const PotentialModel &pot, Json &watermark) {
    const double T = config.at("kernel").at("T").get<double>();
    TimeBudget tb = admissible_times(spec, pot);
    watermark["T"] = T;
    watermark["T_max_basic"] = tb.T_max_basic;
    if (T > tb.T_max_basic) {
        if (!config.at("override_time_condition").get<bool>())
            throw TimeConditionViolated(
                "kernel.T exceeds T_max_basic; pass --override-time-condition");
        watermark["time_condition_overridden"] = true;
    }
    return T;
}

inline FlowConfig flow_config(const Json &config) {
    FlowConfig cfg;
    const Json &f = config.at("flow");
    cfg.tol = f.at("tol").get<double>();
    cfg.method = f.at("method").get<std::string>() == "reference_rk"
                     ? FlowMethod::ReferenceRk
                     : FlowMethod::RotationSplitting;
    return cfg;
}

inline LyapunovSpec lyapunov_spec(const Json &config, const CovarianceSpectrum &spec,
                                  const PotentialModel &pot, double T) {
    const Json &l = config.at("lyapunov");
    LyapunovSpec ls;
    if (l.at("kind").get<std::string>() == "exp") {
        ls.kind = LyapunovKind::Exp;
        ls.eta = l.at("eta").get<double>();
        if (ls.eta <= 0.0)
            ls.eta = eta_default(spec, pot.constants().L2, T);
    } else {
        ls.kind = LyapunovKind::Poly;
        ls.poly_i = l.at("i").get<int>();
    }
    return ls;
}

} // namespace hhmc
namespace hhmc {

// ---------------------------------------------------------------------------
// subcommands; each returns the summary it also writes into the output dir

inline Json run_sample(const Json &config) {
    TargetBundle t = build_target(config);
    Json watermark;
    const double T = kernel_time(config, t.spectrum, *t.potential, watermark);
    const Json &k = config.at("kernel");
    const std::uint64_t seed = k.at("seed").get<std::uint64_t>();
    const std::size_t n_steps = k.at("n_steps").get<std::size_t>();
    const std::size_t n_chains = k.at("n_chains").get<std::size_t>();
    const std::size_t burn_in = k.at("burn_in").get<std::size_t>();
    const std::size_t thin = k.at("thin").get<std::size_t>();
    FlowConfig cfg = flow_config(config);

    Manifest man(config.at("output").get<std::string>());
    std::vector<std::vector<Field>> trajs(n_chains);
    Rng root(seed, "sample", 0);
    parallel_for(n_chains, [&](std::size_t c) {
        Rng rng = root.child("chain", c);
        Field q0(t.spectrum.dim(), 0.0);
        trajs[c] = run_chain(t.spectrum, *t.potential, q0, n_steps, T, cfg, rng,
                             thin, burn_in);
    });

    Json summary;
    summary["kind"] = t.kind;
    summary["watermark"] = watermark;
    summary["seed"] = seed;
    summary["chains"] = n_chains;
    Json per_coord = Json::array();
    for (std::size_t i = 0; i < t.spectrum.dim(); ++i) {
        double m = 0.0, s2 = 0.0;
        std::size_t cnt = 0;
        for (const auto &traj : trajs)
            for (const auto &q : traj) {
                m += q[i];
                ++cnt;
            }
        m /= static_cast<double>(cnt);
        for (const auto &traj : trajs)
            for (const auto &q : traj)
                s2 += (q[i] - m) * (q[i] - m);
        s2 /= static_cast<double>(cnt - 1);
        per_coord.push_back({{"coord", i}, {"mean", m}, {"variance", s2}});
    }
    summary["moments"] = per_coord;

    for (std::size_t c = 0; c < n_chains; ++c) {
        {
            std::ostringstream name;
            name << "chain_" << c << ".csv";
            std::ostringstream body;
            body << "step,seed";
            for (std::size_t i = 0; i < t.spectrum.dim(); ++i)
                body << ",c" << i;
            body << "\n";
            body << std::setprecision(17);
            for (std::size_t s = 0; s < trajs[c].size(); ++s) {
                body << s << "," << seed;
                for (double x : trajs[c][s])
                    body << "," << x;
                body << "\n";
            }
            man.emit(name.str(), body.str());
        }
        std::ostringstream name;
        name << "chain_" << c << ".bin";
        write_trajectory_checkpoint(man.path(name.str()), trajs[c]);
        man.emit(name.str() + ".ok", content_hash(read_file(man.path(name.str()))) + "\n");
    }
    man.emit_json("summary.json", summary);
    validate_json_keys(Json::parse(read_file(man.path("summary.json"))),
                       {"kind", "seed", "chains", "moments"}, "summary.json");
    man.finalize({{"command", "sample"}, {"config", config}});
    return summary;
}

inline Json run_couple(const Json &config) {
    TargetBundle t = build_target(config);
    Json watermark;
    const double T = kernel_time(config, t.spectrum, *t.potential, watermark);
    const Json &cj = config.at("coupling");
    TimeBudget tb = admissible_times(t.spectrum, *t.potential);
    std::size_t N = cj.at("N").get<std::size_t>();
    if (N == 0)
        N = tb.N_min_contraction;
    const std::size_t replicas = cj.at("replicas").get<std::size_t>();
    const std::size_t n_max = cj.at("n_max").get<std::size_t>();
    const std::uint64_t seed = config.at("kernel").at("seed").get<std::uint64_t>();
    LyapunovSpec ls = lyapunov_spec(config, t.spectrum, *t.potential, T);
    HarrisConstants hc = harris_constants(t.spectrum, *t.potential, T, ls);
    double epsilon = cj.at("epsilon").get<double>();
    if (epsilon <= 0.0)
        epsilon = hc.epsilon;
    const std::string variant_s = cj.at("variant").get<std::string>();
    const ShiftVariant variant = variant_s == "pendulum" ? ShiftVariant::Pendulum
                                 : variant_s == "none"   ? ShiftVariant::None
                                                         : ShiftVariant::Linear;

    Rng rng(seed, "couple", 0);
    Field q0(t.spectrum.dim(), 0.0), qt0(t.spectrum.dim(), 0.0);
    q0[0] = 0.5 * epsilon; // rho0 = 1/2
    ContractivityReport rep = contractivity_report(
        t.spectrum, *t.potential, q0, qt0, T, N, n_max, replicas, epsilon, rng,
        variant, flow_config(config));

    Manifest man(config.at("output").get<std::string>());
    CsvBuilder csv({"n", "empirical", "mean_rho", "pinsker", "theory", "margin"});
    for (const auto &r : rep.rows)
        csv.row({double(r.n), r.empirical, r.mean_rho, r.pinsker, r.theory, r.margin});
    man.emit("contractivity.csv", csv.str());

    Json out;
    out["kappa"] = {{"alpha", hc.alpha},     {"kappa1", hc.kappa1},
                    {"kappa2_n0", hc.kappa2_n0}, {"kappa3_n0", hc.kappa3_n0},
                    {"kappa4_n0", hc.kappa4_n0}, {"kappa5_n0", hc.kappa5_n0}};
    out["empirical"] = {{"rho0", rep.rho0}, {"rows", rep.rows.size()}, {"ok", rep.ok}};
    Json margins = Json::array();
    for (const auto &r : rep.rows)
        margins.push_back(r.margin);
    out["margins"] = margins;
    out["replicas"] = replicas;
    out["seed"] = seed;
    out["watermark"] = watermark;
    man.emit_json("coupling_report.json", out);
    validate_json_keys(out, {"kappa", "empirical", "margins", "replicas", "seed"},
                       "coupling_report.json");
    man.finalize({{"command", "couple"}, {"config", config}});
    return out;
}

inline Json run_lyapunov(const Json &config) {
    TargetBundle t = build_target(config);
    Json watermark;
    const double T = kernel_time(config, t.spectrum, *t.potential, watermark);
    const Json &l = config.at("lyapunov");
    LyapunovSpec ls = lyapunov_spec(config, t.spectrum, *t.potential, T);
    const std::size_t n_max = l.at("n_max").get<std::size_t>();
    const std::size_t samples = l.at("samples").get<std::size_t>();
    const std::uint64_t seed = config.at("kernel").at("seed").get<std::uint64_t>();
    Rng rng(seed, "lyapunov", 0);
    Field q0(t.spectrum.dim(), 0.0);
    q0[0] = 1.0;
    DriftReport rep = drift_verify(t.spectrum, *t.potential, ls, {q0}, T, n_max,
                                   samples, rng, false, flow_config(config));

    Manifest man(config.at("output").get<std::string>());
    CsvBuilder csv({"n", "theory_bound", "estimate", "stderr", "margin"});
    Json rows = Json::array();
    for (const auto &r : rep.rows) {
        csv.row({double(r.n), r.theory_bound, r.estimate, r.stderr_, r.margin});
        rows.push_back({{"n", r.n},
                        {"theory_bound", r.theory_bound},
                        {"estimate", r.estimate},
                        {"stderr", r.stderr_},
                        {"margin", r.margin}});
    }
    man.emit("drift.csv", csv.str());
    Json out;
    out["kappa_V"] = rep.constants.kappa_V;
    out["K_V"] = rep.constants.K_V;
    out["log_K_V"] = rep.constants.log_K_V;
    out["certified_by_search"] = rep.constants.certified_by_search;
    out["rows"] = rows;
    out["ok"] = rep.ok;
    out["seed"] = seed;
    out["watermark"] = watermark;
    man.emit_json("drift_report.json", out);
    validate_json_keys(out, {"kappa_V", "K_V", "rows", "ok"}, "drift_report.json");
    man.finalize({{"command", "lyapunov"}, {"config", config}});
    return out;
}

inline Json run_harris(const Json &config) {
    TargetBundle t = build_target(config);
    Json watermark;
    const double T = kernel_time(config, t.spectrum, *t.potential, watermark);
    LyapunovSpec ls = lyapunov_spec(config, t.spectrum, *t.potential, T);
    HarrisConstants hc = harris_constants(t.spectrum, *t.potential, T, ls);
    const Json &cj = config.at("coupling");
    const std::uint64_t seed = config.at("kernel").at("seed").get<std::uint64_t>();

    Json out;
    out["T"] = hc.T;
    out["N"] = hc.N;
    out["alpha"] = hc.alpha;
    out["kappa1"] = hc.kappa1;
    out["kappa_V"] = hc.kappa_V;
    out["K_V"] = hc.K_V;
    out["M_V"] = hc.M_V;
    out["epsilon"] = hc.epsilon;
    out["beta"] = hc.beta;
    out["log_beta"] = hc.log_beta;
    out["n0"] = hc.n0;
    out["kappa5_n0"] = hc.kappa5_n0;
    out["C1"] = hc.C1;
    out["log_C1"] = hc.log_C1;
    out["C2"] = hc.C2;
    out["log_C2"] = hc.log_C2;
    out["C2_positive"] = std::isfinite(hc.log_C2);
    out["degenerate_l1"] = hc.degenerate_l1;
    out["seed"] = seed;
    out["watermark"] = watermark;

    Manifest man(config.at("output").get<std::string>());
    // Empirical decay window [n0, n0 + window] when it is simulatable.
    const std::size_t window = cj.at("window").get<std::size_t>();
    const std::size_t replicas = cj.at("replicas").get<std::size_t>();
    if (hc.n0 < 2000000) {
        Rng rng(seed, "harris", 0);
        Field q0(t.spectrum.dim(), 0.0), qt0(t.spectrum.dim(), 0.0);
        q0[0] = 0.5 * hc.epsilon;
        std::vector<std::size_t> record;
        for (std::size_t n = 1; n < hc.n0; n *= 2)
            record.push_back(n);
        for (std::size_t n = hc.n0; n <= hc.n0 + window; ++n)
            record.push_back(n);
        WrhoDecayReport dec = wrho_decay_experiment(
            t.spectrum, *t.potential, q0, qt0, T, hc.N, ls, hc.epsilon, record,
            replicas, rng, ShiftVariant::None, flow_config(config));
        CsvBuilder csv({"n", "bound", "mean_rho", "pinsker", "v_factor"});
        for (const auto &r : dec.rows)
            csv.row({double(r.n), r.bound, r.mean_rho, r.pinsker, r.v_factor});
        man.emit("wrho_decay.csv", csv.str());
        WrhoRateCheck rc = wrho_rate_check(dec, hc.n0, hc.C2);
        out["decay"] = {{"slope", rc.slope},
                        {"slope_stderr", rc.slope_stderr},
                        {"coalesced", rc.coalesced},
                        {"passes_rate_check", rc.pass}};
    } else {
        out["decay"] = {{"skipped", true},
                        {"reason", "n0 exceeds the simulatable window"}};
    }
    man.emit_json("harris_report.json", out);
    validate_json_keys(out, {"epsilon", "beta", "n0", "C1", "C2", "log_C2"},
                       "harris_report.json");
    man.finalize({{"command", "harris"}, {"config", config}});
    return out;
}

inline Json run_clt(const Json &config) {
    TargetBundle t = build_target(config);
    Json watermark;
    const double T = kernel_time(config, t.spectrum, *t.potential, watermark);
    const Json &k = config.at("kernel");
    const std::uint64_t seed = k.at("seed").get<std::uint64_t>();
    const std::size_t n_steps = k.at("n_steps").get<std::size_t>();
    const std::size_t coord = config.at("clt").at("observable_coord").get<std::size_t>();
    Rng rng(seed, "clt", 0);
    FlowConfig cfg = flow_config(config);
    auto traj = run_chain(t.spectrum, *t.potential, Field(t.spectrum.dim(), 0.0),
                          n_steps, T, cfg, rng);
    std::vector<double> series(traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i)
        series[i] = traj[i][coord];
    SigmaEstimate bm = clt_sigma(series, SigmaMethod::BatchMeans);
    SigmaEstimate ac = clt_sigma(series, SigmaMethod::AutocovSum);

    Manifest man(config.at("output").get<std::string>());
    CsvBuilder csv({"n", "running_mean", "sigma2_hat", "error_bound"});
    double acc = 0.0;
    const std::size_t stride = std::max<std::size_t>(1, series.size() / 1000);
    for (std::size_t i = 0; i < series.size(); ++i) {
        acc += series[i];
        if ((i + 1) % stride == 0)
            csv.row({double(i + 1), acc / double(i + 1), ac.sigma2_hat,
                     4.0 * std::sqrt(ac.sigma2_hat / double(i + 1))});
    }
    man.emit("clt.csv", csv.str());
    Json out;
    out["sigma2_batch_means"] = bm.sigma2_hat;
    out["sigma2_autocov_sum"] = ac.sigma2_hat;
    out["batches"] = bm.batches;
    out["max_lag"] = ac.max_lag;
    out["n"] = series.size();
    out["seed"] = seed;
    out["watermark"] = watermark;
    man.emit_json("clt_report.json", out);
    validate_json_keys(out, {"sigma2_batch_means", "sigma2_autocov_sum", "n"},
                       "clt_report.json");
    man.finalize({{"command", "clt"}, {"config", config}});
    return out;
}

inline Json run_adr_gen(const Json &config) {
    const Json &a = config.at("adr");
    adr::TorusGrid grid{a.at("grid_n").get<int>(), a.at("kappa").get<double>(),
                        a.at("dt").get<double>(), a.at("t_star").get<double>()};
    grid.validate();
    const std::size_t D = a.at("basis_dim").get<std::size_t>();
    adr::DivFreeBasis basis(grid, D);
    const double p = a.at("prior_exponent").get<double>();
    const double gamma = a.at("prior_gamma").get<double>();
    adr::TorusPriorReport prior = adr::prior_spectrum_torus(grid, p, D, gamma);
    adr::Spec theta0 = named_theta0(grid, a.at("theta0").get<std::string>());
    adr::ObservationSpec obs = default_observations(
        grid, basis, a.at("spectral_modes").get<int>(), a.at("obs_time").get<double>(),
        a.at("obs_gamma").get<double>());

    const std::uint64_t seed = config.at("kernel").at("seed").get<std::uint64_t>();
    Rng true_rng(seed, "adr-truth", 0);
    Field q_true = sample_gaussian(prior.spectrum, true_rng);
    Rng noise_rng(seed, "adr-noise", 0);
    const double noise_scale = a.at("noise_scale").get<double>();
    std::vector<double> y = adr::generate_data(grid, basis, theta0, obs, q_true,
                                               noise_scale, noise_rng);

    Json d;
    d["grid"] = {{"n", grid.n}, {"kappa", grid.kappa}, {"dt", grid.dt},
                 {"t_star", grid.t_star}};
    d["basis_dim"] = D;
    d["prior"] = {{"kind", a.at("prior").get<std::string>()},
                  {"exponent", p},
                  {"gamma", gamma},
                  {"embedding_c1", prior.embedding_c1}};
    d["observations"] = observations_to_json(obs);
    d["theta0"] = a.at("theta0").get<std::string>();
    d["y"] = y;
    d["q_true"] = q_true;
    d["noise_seed"] = seed;
    d["noise_scale"] = noise_scale;

    Manifest man(config.at("output").get<std::string>());
    man.emit_json("data.json", d);
    man.finalize({{"command", "adr-gen"}, {"config", config}});
    return d;
}

inline Json run_adr_sample(const Json &config) {
    const std::string data_path = config.at("adr").at("data").get<std::string>();
    AdrBundle b = load_adr_bundle(data_path);
    const std::uint64_t seed = config.at("kernel").at("seed").get<std::uint64_t>();
    Rng probe_rng(seed, "adr-probe", 0);
    auto pot0 = std::make_unique<adr::AdrPotential>(
        b.grid, *b.basis, b.theta0, b.obs, b.data, PotentialConstants{});
    PotentialConstants pk = probe_adr_constants(b.prior, *pot0, probe_rng);
    adr::AdrPotential pot(b.grid, *b.basis, b.theta0, b.obs, b.data, pk);

    Json watermark;
    const double T = kernel_time(config, b.prior, pot, watermark);
    const Json &k = config.at("kernel");
    const std::size_t n_steps = k.at("n_steps").get<std::size_t>();
    const std::size_t thin = k.at("thin").get<std::size_t>();
    FlowConfig cfg = flow_config(config);

    // gradient check report before sampling
    Rng check_rng(seed, "adr-check", 0);
    Field qc = sample_gaussian(b.prior, check_rng);
    Field gr = pot.grad(qc);
    double fd_err = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
        Field xi(b.prior.dim());
        for (double &x : xi)
            x = check_rng.gaussian();
        double dir = 0.0;
        for (std::size_t j = 0; j < xi.size(); ++j)
            dir += gr[j] * xi[j];
        const double h = 1e-4;
        const double fd =
            (pot.evaluate(axpy(h, xi, qc)) - pot.evaluate(axpy(-h, xi, qc))) /
            (2.0 * h);
        fd_err = std::max(fd_err, std::abs(dir - fd) /
                                      std::max({1.0, std::abs(dir), std::abs(fd)}));
    }

    Rng rng(seed, "adr-sample", 0);
    Field q0(b.prior.dim(), 0.0);
    std::vector<Field> traj;
    std::vector<double> u_values;
    ChainState st{q0, 0, 0};
    double u_min = pot.evaluate(q0);
    const double u0 = u_min;
    for (std::size_t s = 1; s <= n_steps; ++s) {
        st = hmc_step(b.prior, pot, st, T, cfg, rng);
        const double u = pot.evaluate(st.q);
        u_min = std::min(u_min, u);
        if (s % thin == 0) {
            traj.push_back(st.q);
            u_values.push_back(u);
        }
    }

    Manifest man(config.at("output").get<std::string>());
    CsvBuilder csv({"step", "U"});
    for (std::size_t i = 0; i < u_values.size(); ++i)
        csv.row({double((i + 1) * thin), u_values[i]});
    man.emit("posterior_misfit.csv", csv.str());
    write_trajectory_checkpoint(man.path("posterior_chain.bin"), traj);

    Json out;
    out["U0"] = u0;
    out["U_min"] = u_min;
    out["grad_fd_rel_err"] = fd_err;
    out["declared"] = {{"L0", pk.L0}, {"L1", pk.L1}, {"L2", pk.L2}, {"L3", pk.L3}};
    out["steps"] = n_steps;
    out["seed"] = seed;
    out["watermark"] = watermark;
    man.emit_json("adr_report.json", out);
    validate_json_keys(out, {"U0", "U_min", "grad_fd_rel_err", "steps"},
                       "adr_report.json");
    man.finalize({{"command", "adr-sample"}, {"config", config}});
    return out;
}

inline Json run_audit(const Json &config) {
    TargetBundle t = build_target(config);
    const std::uint64_t seed = config.at("kernel").at("seed").get<std::uint64_t>();
    Rng rng(seed, "audit", 0);
    PotentialAuditReport rep = audit_potential(t.spectrum, *t.potential, rng);
    Json out;
    out["max_grad_fd_rel_err"] = rep.max_grad_fd_rel_err;
    out["max_hess_asymmetry"] = rep.max_hess_asymmetry;
    out["max_observed_L1"] = rep.max_observed_l1;
    out["declared_L1"] = t.potential->constants().L1;
    out["l1_dominates"] = rep.l1_dominates;
    out["trace"] = t.spectrum.trace();
    out["trace_regularized"] = t.spectrum.trace_regularized();
    Manifest man(config.at("output").get<std::string>());
    man.emit_json("audit_report.json", out);
    validate_json_keys(out, {"max_grad_fd_rel_err", "l1_dominates"},
                       "audit_report.json");
    man.finalize({{"command", "audit"}, {"config", config}});
    return out;
}

} // namespace hhmc

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "hhmc/kernel.hpp"
#include "hhmc/parallel.hpp"
#include "hhmc/potential.hpp"
#include "hhmc/spectral.hpp"

namespace hhmc {

enum class LyapunovKind { Poly, Exp };

struct DriftConstants {
    double kappa_V = 0.0;
    double K_V = 0.0;      // may overflow to inf for the exp kind; see log_K_V
    double log_K_V = 0.0;
    bool certified_by_search = false; // poly i != 2 route
};

struct LyapunovSpec {
    LyapunovKind kind = LyapunovKind::Poly;
    int poly_i = 2;      // V_{1,i}(q) = |q|_g^i
    double eta = 0.0;    // V_{2,eta}(q) = exp(eta |q|_g^2)
};

// Cap on eta for which E exp(eta |v|_g^2), v ~ N(0,C), is finite with margin;
// conservative default 0.9 / [Tr(C^{1-2g}) (64/L2 + 17.75 T^2)].
inline double eta_default(const CovarianceSpectrum &spec, double L2, double T) {
    return 0.9 / (spec.trace_regularized() * (64.0 / L2 + 17.75 * T * T));
}

// Gaussian moment-generating oracle: E exp(eta |v|_g^2) for v ~ N(0, C).
inline double gaussian_exp_moment(const CovarianceSpectrum &spec, double eta) {
    double s = 0.0;
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        const double a = 2.0 * eta * std::pow(spec.eigenvalue(i), 1.0 - 2.0 * spec.gamma());
        if (a >= 1.0)
            throw EtaTooLarge("2 eta lambda_i^{1-2g} must stay below 1");
        s += -0.5 * std::log1p(-a);
    }
    return std::exp(s);
}

inline double v_eval(const CovarianceSpectrum &spec, const LyapunovSpec &lspec,
                     const Field &q) {
    const double n = gamma_norm(spec, spec.gamma(), q);
    if (lspec.kind == LyapunovKind::Poly)
        return std::pow(n, lspec.poly_i);
    const double a = lspec.eta * n * n;
    if (a > 700.0)
        throw Overflow("exp Lyapunov argument exceeds 700");
    return std::exp(a);
}

inline void check_lyapunov_time(const CovarianceSpectrum &spec,
                                const PotentialModel &pot, double T) {
    const PotentialConstants k = pot.constants();
    const double c1 =
        1.0 + std::pow(spec.lambda1(), 1.0 - 2.0 * spec.gamma()) * k.L1;
    const double cap =
        std::min(1.0 / std::sqrt(2.0 * c1), std::sqrt(k.L2) / (2.0 * std::sqrt(6.0) * c1));
    if (T > cap)
        throw TimeConditionViolated("T exceeds the Lyapunov time bound");
}

// Drift constants (kappa_V, K_V) with P^n V <= kappa_V^n V + K_V.
//   V_{1,2}: kappa_V = e^{-L2 T^2/16},
//            K_V = (67/8 Tr(C^{1-2g}) + 5/3 (lambda_1^{1-2g} L0)^2 T^2 + L3) 48/L2.
//   V_{2,eta}: kappa_V = e^{-L2 T^2/32}, K_V = R^{32/(L2 T^2)} L2 T^2 / 32.
//   V_{1,i}, i != 2: one-step constant found by search over a (q0, v0) grid.
inline DriftConstants drift_constants(const CovarianceSpectrum &spec,
                                      const PotentialModel &pot,
                                      const LyapunovSpec &lspec, double T,
                                      Rng *search_rng = nullptr) {
    check_lyapunov_time(spec, pot, T);
    const PotentialConstants k = pot.constants();
    const double g = spec.gamma();
    const double lam1r = std::pow(spec.lambda1(), 1.0 - 2.0 * g);
    DriftConstants out;

    if (lspec.kind == LyapunovKind::Poly && lspec.poly_i == 2) {
        out.kappa_V = std::exp(-k.L2 * T * T / 16.0);
        out.K_V = (67.0 / 8.0 * spec.trace_regularized() +
                   5.0 / 3.0 * (lam1r * k.L0) * (lam1r * k.L0) * T * T + k.L3) *
                  48.0 / k.L2;
        out.log_K_V = std::log(out.K_V);
        return out;
    }

    if (lspec.kind == LyapunovKind::Exp) {
        const double eta = lspec.eta;
        const double mg = 32.0 / k.L2 + 67.0 / 8.0 * T * T;
        const double a = 2.0 * eta * mg * spec.trace_regularized();
        if (!(eta > 0.0) || a >= 1.0)
            throw EtaTooLarge("eta violates the exp-moment finiteness bound");
        const double logR = (5.0 / 3.0 * eta * (lam1r * k.L0) * (lam1r * k.L0) * T * T * T * T +
                             eta * k.L3 * T * T) -
                            0.5 * std::log1p(-a);
        out.kappa_V = std::exp(-k.L2 * T * T / 32.0);
        out.log_K_V = 32.0 / (k.L2 * T * T) * logR + std::log(k.L2 * T * T / 32.0);
        out.K_V = std::exp(out.log_K_V); // may be inf; log form stays exact
        return out;
    }

    // Poly i != 2 has no closed-form constants. Search the one-step
    // inequality |q_T|^i <= kappa_step |q0|^i + C (|v0|^i + 1) over a grid
    // and certify C by sampling; record the route.
    const int i = lspec.poly_i;
    if (i < 1)
        throw ConfigInvalid("poly Lyapunov exponent must be >= 1");
    out.kappa_V = std::exp(-k.L2 * T * T * i / 65.0);
    Rng local = search_rng ? *search_rng : Rng(12345, "lyapunov-search", 0);
    FlowConfig fcfg;
    double C_tilde = 0.0;
    double mean_vi = 0.0;
    const int n_draws = 4000;
    for (int d = 0; d < n_draws; ++d) {
        Field v0 = sample_gaussian(spec, local);
        mean_vi += std::pow(gamma_norm(spec, g, v0), i);
    }
    mean_vi /= n_draws;
    const std::vector<double> radii = {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0};
    for (double r : radii) {
        for (int d = 0; d < 64; ++d) {
            Field dir = sample_gaussian(spec, local);
            const double nd = gamma_norm(spec, g, dir);
            Field q0 = nd > 0.0 ? scaled(r / nd, dir) : Field(spec.dim(), 0.0);
            Field v0 = sample_gaussian(spec, local);
            PhasePoint pT = flow(spec, pot, {q0, v0}, T, fcfg);
            const double lhs = std::pow(gamma_norm(spec, g, pT.q), i);
            const double base = out.kappa_V * std::pow(gamma_norm(spec, g, q0), i);
            const double denom = std::pow(gamma_norm(spec, g, v0), i) + 1.0;
            C_tilde = std::max(C_tilde, (lhs - base) / denom);
        }
    }
    C_tilde *= 1.5; // search slack
    out.K_V = C_tilde * (1.5 * mean_vi + 1.0) / (1.0 - out.kappa_V);
    out.log_K_V = std::log(out.K_V);
    out.certified_by_search = true;
    return out;
}

struct DriftRow {
    std::size_t n = 0;
    double theory_bound = 0.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    double margin = 0.0;
};

struct DriftReport {
    DriftConstants constants;
    std::vector<DriftRow> rows;
    bool ok = true;
};

// Monte Carlo estimate of P^n V(q0), n = 1..n_max, sanity-checked against
// kappa_V^n V(q0) + K_V with three standard errors of slack.
inline DriftReport drift_verify(const CovarianceSpectrum &spec,
                                const PotentialModel &pot, const LyapunovSpec &lspec,
                                const std::vector<Field> &q0_set, double T,
                                std::size_t n_max, std::size_t samples, Rng &rng,
                                bool throw_on_violation = true,
                                const FlowConfig &cfg = {}) {
    DriftReport rep;
    rep.constants = drift_constants(spec, pot, lspec, T, &rng);
    for (const Field &q0 : q0_set) {
        FlowConfig fcfg = cfg;
        if (fcfg.ladder && fcfg.method == FlowMethod::RotationSplitting) {
            Rng probe = rng.child("drift-calibration", 0);
            fcfg.substeps =
                calibrate_substeps(spec, pot, {q0, sample_gaussian(spec, probe)}, T, cfg);
            fcfg.ladder = false;
        }
        const double v0val = v_eval(spec, lspec, q0);
        std::vector<std::vector<double>> per_n(n_max,
                                               std::vector<double>(samples, 0.0));
        parallel_for(samples, [&](std::size_t s) {
            Rng r = rng.child("drift", s);
            ChainState st{q0, 0, 0};
            for (std::size_t n = 1; n <= n_max; ++n) {
                st = hmc_step(spec, pot, st, T, fcfg, r);
                per_n[n - 1][s] = v_eval(spec, lspec, st.q);
            }
        });
        for (std::size_t n = 1; n <= n_max; ++n) {
            double m = 0.0;
            for (double x : per_n[n - 1])
                m += x;
            m /= static_cast<double>(samples);
            double var = 0.0;
            for (double x : per_n[n - 1])
                var += (x - m) * (x - m);
            var /= std::max<std::size_t>(1, samples - 1);
            DriftRow row;
            row.n = n;
            row.estimate = m;
            row.stderr_ = std::sqrt(var / static_cast<double>(samples));
            row.theory_bound =
                std::pow(rep.constants.kappa_V, static_cast<double>(n)) * v0val +
                rep.constants.K_V;
            row.margin = row.theory_bound + 3.0 * row.stderr_ - row.estimate;
            if (row.margin < 0.0) {
                rep.ok = false;
                if (throw_on_violation)
                    throw DriftViolated("P^n V exceeds the drift bound at n=" +
                                        std::to_string(n));
            }
            rep.rows.push_back(row);
        }
    }
    return rep;
}

// Closed-form P V_{1,2} for the diagonal quadratic family:
// E |q_T|_g^2 = sum_i lambda_i^{-2g} [ q_i^2 cos^2(w_i T) + lambda_i sin^2(w_i T)/w_i^2 ].
inline double quadratic_pv12_exact(const CovarianceSpectrum &spec,
                                   const QuadraticPotential &pot, const Field &q0,
                                   double T) {
    double s = 0.0;
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        const double li = spec.eigenvalue(i);
        const double w = std::sqrt(1.0 + li * pot.coefficients()[i]);
        const double c = std::cos(w * T), sn = std::sin(w * T);
        const double wgt = std::pow(li, -2.0 * spec.gamma());
        s += wgt * (q0[i] * q0[i] * c * c + li * sn * sn / (w * w));
    }
    return s;
}

} // namespace hhmc

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hhmc/ergodic.hpp"
#include "hhmc/flow.hpp"
#include "hhmc/kernel.hpp"
#include "hhmc/lyapunov.hpp"
#include "hhmc/parallel.hpp"
#include "hhmc/potential.hpp"
#include "hhmc/spectral.hpp"

namespace hhmc {

// ---------------------------------------------------------------------------
// distance-like functions

inline double rho(const CovarianceSpectrum &spec, const Field &q, const Field &qt,
                  double epsilon, double gamma_exp) {
    if (!(epsilon > 0.0))
        throw ConfigInvalid("rho needs epsilon > 0");
    return std::min(gamma_norm(spec, gamma_exp, sub(q, qt)) / epsilon, 1.0);
}

inline double rho_tilde(const CovarianceSpectrum &spec, const Field &q,
                        const Field &qt, double epsilon, double gamma_exp,
                        const LyapunovSpec &lspec) {
    const double r = rho(spec, q, qt, epsilon, gamma_exp);
    return std::sqrt(r * (1.0 + v_eval(spec, lspec, q) + v_eval(spec, lspec, qt)));
}

// ---------------------------------------------------------------------------
// nudged coupling

enum class ShiftVariant { Linear, Pendulum, None };

// Velocity shift applied to the second chain, supported on modes <= N:
//   linear:   T^{-1} Pi_N (q - qt)
//   pendulum: (cos T / sin T) Pi_N (q - qt)
inline Field nudge_shift(const Field &q, const Field &qt, std::size_t N, double T,
                         ShiftVariant variant) {
    if (N < 1 || N > q.size())
        throw BadN("nudge_shift needs 1 <= N <= D");
    Field s(q.size(), 0.0);
    if (variant == ShiftVariant::None)
        return s;
    double factor;
    if (variant == ShiftVariant::Linear) {
        factor = 1.0 / T;
    } else {
        const double sn = std::sin(T);
        if (std::abs(sn) < 1e-12)
            throw PendulumSingularT("pendulum shift undefined when sin T = 0");
        factor = std::cos(T) / sn;
    }
    for (std::size_t i = 0; i < N; ++i)
        s[i] = factor * (q[i] - qt[i]);
    return s;
}

struct CouplingEntry {
    Field shared_noise;
    Field shift;
    double dist_gamma = 0.0;  // |q - qt|_g after the step
    double dist_alpha = 0.0;  // alpha-norm after the step
    double kl_increment = 0.0; // 1/2 |shift|_{1/2}^2
};

using CouplingTrace = std::vector<CouplingEntry>;

// KL divergence between the shifted and unshifted noise-path laws:
// 1/2 sum_j |S_j|_{1/2}^2, additive over trace segments.
inline double girsanov_kl(const CouplingTrace &trace) {
    double s = 0.0;
    for (const auto &e : trace)
        s += e.kl_increment;
    return s;
}

struct CoupledPair {
    ChainState a;
    ChainState b;
};

// One coupled transition: both chains consume the same Gaussian draw, the
// second with the low-mode shift added. Returns the trace entry.
inline CouplingEntry coupled_step(const CovarianceSpectrum &spec,
                                  const PotentialModel &pot, CoupledPair &pair,
                                  double T, std::size_t N, const FlowConfig &cfg,
                                  Rng &rng, ShiftVariant variant,
                                  double alpha_for_trace) {
    CouplingEntry e;
    e.shared_noise = sample_gaussian(spec, rng);
    e.shift = nudge_shift(pair.a.q, pair.b.q, N, T, variant);
    e.kl_increment = 0.0;
    for (std::size_t i = 0; i < e.shift.size(); ++i)
        e.kl_increment += 0.5 * e.shift[i] * e.shift[i] / spec.eigenvalue(i);

    PhasePoint pa = flow(spec, pot, {pair.a.q, e.shared_noise}, T, cfg);
    PhasePoint pb = flow(spec, pot, {pair.b.q, axpy(1.0, e.shift, e.shared_noise)}, T, cfg);
    pair.a = {std::move(pa.q), pair.a.step_index + 1, rng.cursor()};
    pair.b = {std::move(pb.q), pair.b.step_index + 1, rng.cursor()};

    Field z = sub(pair.a.q, pair.b.q);
    e.dist_gamma = gamma_norm(spec, spec.gamma(), z);
    e.dist_alpha = alpha_norm(spec, spec.gamma(), N, alpha_for_trace, z);
    return e;
}

// Coupling-based upper bound on a Wasserstein distance: the sample mean of
// the distance over coupled pairs, with its Monte Carlo standard error.
struct WassersteinUpper {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
};

inline WassersteinUpper wasserstein_upper(const std::vector<double> &coupled_distances) {
    if (coupled_distances.empty())
        throw EmptySample("wasserstein_upper needs at least one coupled sample");
    WassersteinUpper out;
    out.n = coupled_distances.size();
    for (double d : coupled_distances)
        out.mean += d;
    out.mean /= static_cast<double>(out.n);
    double var = 0.0;
    for (double d : coupled_distances)
        var += (d - out.mean) * (d - out.mean);
    var /= std::max<std::size_t>(1, out.n - 1);
    out.stderr_ = std::sqrt(var / static_cast<double>(out.n));
    return out;
}

// ---------------------------------------------------------------------------
// kappa calculator: contraction, smallness and assembly constants

// All formulas in one place so they can be audited against hand-derived
// values. kappa4's exponential survives in log form when it underflows.
class KappaCalculator {
  public:
    KappaCalculator(const CovarianceSpectrum &spec, const PotentialModel &pot,
                    double T, std::size_t N)
        : T_(T), N_(N) {
        const double g = spec.gamma();
        lam1r_ = std::pow(spec.lambda1(), 1.0 - 2.0 * g);
        lamN_half_ = std::pow(spec.eigenvalue(N - 1), -0.5 + g);
        L1_ = pot.constants().L1;
        alpha_ = 4.0 * (1.0 + lam1r_ * L1_);
        kappa1_ = 1.0 - T * T / 12.0;
        one_m_k1sq_ = 1.0 - kappa1_ * kappa1_;
    }

    double T() const { return T_; }
    std::size_t N() const { return N_; }
    double alpha() const { return alpha_; }
    double kappa1() const { return kappa1_; }
    double lambdaN_pow() const { return lamN_half_; } // lambda_N^{-1/2+g}

    // kappa2(n) = sqrt(2) alpha kappa1^n
    double kappa2(double n) const {
        return std::sqrt(2.0) * alpha_ * std::exp(n * std::log(kappa1_));
    }

    // kappa3(n) = kappa2(n) + sqrt(2) lambda_N^{-1/2+g} alpha eps / (2 T sqrt(1-k1^2))
    double kappa3(double n, double epsilon) const {
        return kappa2(n) + cost_of_control(epsilon);
    }

    double cost_of_control(double epsilon) const {
        return std::sqrt(2.0) * lamN_half_ * alpha_ * epsilon /
               (2.0 * T_ * std::sqrt(one_m_k1sq_));
    }

    // Exponent E in kappa4 = exp(-E)/2 - 2 M kappa2(n)/eps:
    // E = 16 L1 alpha^2 M^2 / (T^2 (1 - kappa1^2)).
    double kappa4_exponent(double M) const {
        return 16.0 * L1_ * alpha_ * alpha_ * M * M / (T_ * T_ * one_m_k1sq_);
    }

    double kappa4(double n, double M, double epsilon) const {
        return 0.5 * std::exp(-kappa4_exponent(M)) - 2.0 * M * kappa2(n) / epsilon;
    }

    // KL budget of the nudged coupling (eq. bound, not the realized value):
    // KL <= lambda_N^{-1+2g} alpha^2 |q0-qt0|_g^2 / (T^2 (1-kappa1^2)).
    double kl_bound(double dist_gamma) const {
        return lamN_half_ * lamN_half_ * alpha_ * alpha_ * dist_gamma * dist_gamma /
               (T_ * T_ * one_m_k1sq_);
    }

  private:
    double T_, lam1r_, lamN_half_, L1_, alpha_, kappa1_, one_m_k1sq_;
    std::size_t N_;
};

// ---------------------------------------------------------------------------
// reports

struct ContractivityRow {
    std::size_t n = 0;
    double empirical = 0.0;   // E rho + sqrt(KL/2)
    double mean_rho = 0.0;
    double pinsker = 0.0;
    double theory = 0.0;      // kappa3(n) rho0
    double margin = 0.0;
};

struct ContractivityReport {
    double rho0 = 0.0;
    double epsilon = 0.0;
    std::vector<ContractivityRow> rows;
    bool ok = true;
};

inline void check_contraction_conditions(const CovarianceSpectrum &spec,
                                         const PotentialModel &pot, double T,
                                         std::size_t N) {
    const double g = spec.gamma();
    const double c1 = 1.0 + std::pow(spec.lambda1(), 1.0 - 2.0 * g) * pot.constants().L1;
    if (T > 1.0 / std::sqrt(2.0 * c1))
        throw ConditionsViolated("T violates the contraction time bound");
    const double L1 = pot.constants().L1;
    if (L1 > 0.0) {
        const double lam_next =
            N < spec.dim() ? std::pow(spec.eigenvalue(N), 1.0 - 2.0 * g) : 0.0;
        if (lam_next > 1.0 / (4.0 * L1))
            throw ConditionsViolated("N violates lambda_{N+1}^{1-2g} <= 1/(4 L1)");
    }
}

// Empirical check of rho-contractivity: coupled upper bound on
// W_rho(P^n(q0,.), P^n(qt0,.)) against kappa3(n) rho(q0, qt0).
inline ContractivityReport
contractivity_report(const CovarianceSpectrum &spec, const PotentialModel &pot,
                     const Field &q0, const Field &qt0, double T, std::size_t N,
                     std::size_t n_max, std::size_t replicas, double epsilon,
                     Rng &rng, ShiftVariant variant = ShiftVariant::Linear,
                     const FlowConfig &cfg = {}) {
    check_contraction_conditions(spec, pot, T, N);
    KappaCalculator kc(spec, pot, T, N);
    ContractivityReport rep;
    rep.epsilon = epsilon;
    rep.rho0 = rho(spec, q0, qt0, epsilon, spec.gamma());
    if (!(rep.rho0 < 1.0))
        throw ConditionsViolated("contractivity needs rho(q0, qt0) < 1");

    FlowConfig run_cfg = cfg;
    if (run_cfg.ladder && run_cfg.method == FlowMethod::RotationSplitting) {
        Rng probe = rng.child("coupling-calibration", 0);
        run_cfg.substeps =
            calibrate_substeps(spec, pot, {q0, sample_gaussian(spec, probe)}, T, cfg);
        run_cfg.ladder = false;
    }
    std::vector<std::vector<double>> rho_acc(n_max, std::vector<double>(replicas));
    std::vector<std::vector<double>> kl_acc(n_max, std::vector<double>(replicas));
    parallel_for(replicas, [&](std::size_t r) {
        Rng stream = rng.child("contractivity", r);
        CoupledPair pair{{q0, 0, 0}, {qt0, 0, 0}};
        double kl = 0.0;
        for (std::size_t n = 1; n <= n_max; ++n) {
            CouplingEntry e =
                coupled_step(spec, pot, pair, T, N, run_cfg, stream, variant, kc.alpha());
            kl += e.kl_increment;
            rho_acc[n - 1][r] = std::min(e.dist_gamma / epsilon, 1.0);
            kl_acc[n - 1][r] = kl;
        }
    });
    for (std::size_t n = 1; n <= n_max; ++n) {
        ContractivityRow row;
        row.n = n;
        for (std::size_t r = 0; r < replicas; ++r) {
            row.mean_rho += rho_acc[n - 1][r];
            row.pinsker += kl_acc[n - 1][r];
        }
        row.mean_rho /= static_cast<double>(replicas);
        row.pinsker = std::sqrt(0.5 * row.pinsker / static_cast<double>(replicas));
        row.empirical = row.mean_rho + row.pinsker;
        row.theory = kc.kappa3(static_cast<double>(n), epsilon) * rep.rho0;
        row.margin = row.theory - row.empirical;
        if (row.margin < 0.0)
            rep.ok = false;
        rep.rows.push_back(row);
    }
    return rep;
}

struct SmallnessRow {
    std::size_t n = 0;
    double empirical = 0.0; // E rho + 1 - exp(-KL)/2
    double theory = 0.0;    // 1 - kappa4(n)
    double margin = 0.0;
};

struct SmallnessReport {
    double M_ball = 0.0;
    std::vector<SmallnessRow> rows;
    bool ok = true;
};

// Empirical check of rho-smallness on the ball |q|_g <= M_ball.
inline SmallnessReport
smallness_report(const CovarianceSpectrum &spec, const PotentialModel &pot,
                 double M_ball, double T, std::size_t N, std::size_t n_max,
                 double epsilon, std::size_t replicas, Rng &rng,
                 ShiftVariant variant, const FlowConfig &cfg = {}) {
    check_contraction_conditions(spec, pot, T, N);
    KappaCalculator kc(spec, pot, T, N);
    SmallnessReport rep;
    rep.M_ball = M_ball;

    FlowConfig run_cfg = cfg;
    if (run_cfg.ladder && run_cfg.method == FlowMethod::RotationSplitting) {
        Rng probe = rng.child("smallness-calibration", 0);
        Field dir = sample_gaussian(spec, probe);
        const double nd = gamma_norm(spec, spec.gamma(), dir);
        Field repr = nd > 0.0 ? scaled(M_ball / std::max(nd, 1e-300), dir) : dir;
        run_cfg.substeps =
            calibrate_substeps(spec, pot, {repr, sample_gaussian(spec, probe)}, T, cfg);
        run_cfg.ladder = false;
    }
    std::vector<std::vector<double>> rho_acc(n_max, std::vector<double>(replicas));
    std::vector<std::vector<double>> kl_acc(n_max, std::vector<double>(replicas));
    parallel_for(replicas, [&](std::size_t r) {
        Rng stream = rng.child("smallness", r);
        // antithetic start pair on the sphere of radius M_ball
        Field dir = sample_gaussian(spec, stream);
        const double nd = gamma_norm(spec, spec.gamma(), dir);
        Field q0 = nd > 0.0 ? scaled(M_ball / nd, dir) : dir;
        Field qt0 = scaled(-1.0, q0);
        CoupledPair pair{{q0, 0, 0}, {qt0, 0, 0}};
        double kl = 0.0;
        for (std::size_t n = 1; n <= n_max; ++n) {
            CouplingEntry e =
                coupled_step(spec, pot, pair, T, N, run_cfg, stream, variant, kc.alpha());
            kl += e.kl_increment;
            rho_acc[n - 1][r] = std::min(e.dist_gamma / epsilon, 1.0);
            kl_acc[n - 1][r] = kl;
        }
    });
    for (std::size_t n = 1; n <= n_max; ++n) {
        SmallnessRow row;
        row.n = n;
        double mean_rho = 0.0, mean_kl = 0.0;
        for (std::size_t r = 0; r < replicas; ++r) {
            mean_rho += rho_acc[n - 1][r];
            mean_kl += kl_acc[n - 1][r];
        }
        mean_rho /= static_cast<double>(replicas);
        mean_kl /= static_cast<double>(replicas);
        row.empirical = mean_rho + 1.0 - 0.5 * std::exp(-mean_kl);
        row.theory = 1.0 - kc.kappa4(static_cast<double>(n), M_ball, epsilon);
        row.margin = row.theory - row.empirical;
        if (row.margin < 0.0)
            rep.ok = false;
        rep.rows.push_back(row);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// empirical W_rho-tilde decay along a coupling

struct WrhoDecayRow {
    std::size_t n = 0;
    double mean_rho = 0.0;
    double pinsker = 0.0;  // sqrt(KL/2); zero for the synchronous coupling
    double v_factor = 0.0; // 1 + E V(Q_n) + E V(Qt_n)
    double bound = 0.0;    // sqrt((mean_rho + pinsker) * v_factor)
};

struct WrhoDecayReport {
    std::vector<WrhoDecayRow> rows;
};

// Coupling-based upper bound on W_rho~(P^n(q0,.), P^n(qt0,.)) recorded at the
// requested step indices: W_rho~^2 <= W_rho * (1 + P^nV(q0) + P^nV(qt0)) by
// Cauchy-Schwarz, with W_rho bounded by the coupled mean of rho plus the
// Girsanov TV cost. With the synchronous coupling the pair can coalesce to
// the working precision, after which the bound is exactly zero.
inline WrhoDecayReport wrho_decay_experiment(
    const CovarianceSpectrum &spec, const PotentialModel &pot, const Field &q0,
    const Field &qt0, double T, std::size_t N, const LyapunovSpec &lspec,
    double epsilon, const std::vector<std::size_t> &record_set,
    std::size_t replicas, Rng &rng, ShiftVariant variant,
    const FlowConfig &cfg = {}) {
    if (record_set.empty())
        throw ConfigInvalid("wrho_decay_experiment needs record indices");
    KappaCalculator kc(spec, pot, T, N);
    const std::size_t n_rows = record_set.size();
    const std::size_t n_hi = record_set.back();
    std::vector<std::vector<double>> rho_acc(n_rows, std::vector<double>(replicas));
    std::vector<std::vector<double>> kl_acc(n_rows, std::vector<double>(replicas));
    std::vector<std::vector<double>> v_acc(n_rows, std::vector<double>(replicas));
    FlowConfig run_cfg = cfg;
    if (run_cfg.ladder && run_cfg.method == FlowMethod::RotationSplitting) {
        Rng probe = rng.child("wrho-calibration", 0);
        run_cfg.substeps =
            calibrate_substeps(spec, pot, {q0, sample_gaussian(spec, probe)}, T, cfg);
        run_cfg.ladder = false;
    }
    parallel_for(replicas, [&](std::size_t r) {
        Rng stream = rng.child("wrho", r);
        CoupledPair pair{{q0, 0, 0}, {qt0, 0, 0}};
        double kl = 0.0;
        std::size_t slot = 0;
        for (std::size_t n = 1; n <= n_hi; ++n) {
            CouplingEntry e = coupled_step(spec, pot, pair, T, N, run_cfg, stream,
                                           variant, kc.alpha());
            kl += e.kl_increment;
            if (slot < n_rows && n == record_set[slot]) {
                rho_acc[slot][r] = std::min(e.dist_gamma / epsilon, 1.0);
                kl_acc[slot][r] = kl;
                v_acc[slot][r] =
                    v_eval(spec, lspec, pair.a.q) + v_eval(spec, lspec, pair.b.q);
                ++slot;
            }
        }
    });
    WrhoDecayReport rep;
    for (std::size_t i = 0; i < n_rows; ++i) {
        WrhoDecayRow row;
        row.n = record_set[i];
        double kl = 0.0;
        for (std::size_t r = 0; r < replicas; ++r) {
            row.mean_rho += rho_acc[i][r];
            kl += kl_acc[i][r];
            row.v_factor += v_acc[i][r];
        }
        row.mean_rho /= static_cast<double>(replicas);
        kl /= static_cast<double>(replicas);
        row.pinsker = std::sqrt(0.5 * kl);
        row.v_factor = 1.0 + row.v_factor / static_cast<double>(replicas);
        row.bound = std::sqrt((row.mean_rho + row.pinsker) * row.v_factor);
        rep.rows.push_back(row);
    }
    return rep;
}

// Decay-rate verdict over the window rows against the assembled C2. When the
// bound is positive through the window the log-linear fit slope must beat
// -C2 within its standard error; when the pair has already coalesced to an
// exactly zero bound, the realized rate from the last positive reference row
// is infinite and beats any finite C2.
struct WrhoRateCheck {
    double slope = 0.0;
    double slope_stderr = 0.0;
    bool coalesced = false;
    bool pass = false;
};

inline WrhoRateCheck wrho_rate_check(const WrhoDecayReport &rep,
                                     std::size_t window_lo, double C2) {
    WrhoRateCheck out;
    std::vector<double> xs, ys;
    double last_positive = 0.0;
    bool decayed_to_zero = false;
    for (const auto &r : rep.rows) {
        if (r.n < window_lo) {
            if (r.bound > 0.0)
                last_positive = r.bound;
            continue;
        }
        if (r.bound > 0.0) {
            xs.push_back(static_cast<double>(r.n));
            ys.push_back(std::log(r.bound));
        } else {
            decayed_to_zero = true;
        }
    }
    if (xs.size() >= 3 && !decayed_to_zero) {
        SlopeFit fit = fit_slope(xs, ys);
        out.slope = fit.slope;
        out.slope_stderr = fit.stderr_;
        out.pass = fit.slope <= -C2 + fit.stderr_;
        return out;
    }
    // coalesced window: valid iff the bound really did fall from a positive
    // reference value to zero
    out.coalesced = true;
    out.pass = decayed_to_zero && last_positive > 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// weak-Harris assembly

// The assembled constants routinely involve exp(-E) with E far beyond double
// range, so every derived quantity is carried in log form alongside the
// (possibly underflowed) double value.
struct HarrisConstants {
    double T = 0.0;
    std::size_t N = 1;
    double alpha = 0.0;
    double kappa1 = 0.0;
    double kappa_V = 0.0;
    double K_V = 0.0;
    double M_V = 0.0;
    double epsilon = 0.0;
    double beta = 0.0;      // may underflow; log_beta is authoritative
    double log_beta = 0.0;
    std::uint64_t n0 = 0;
    double kappa2_n0 = 0.0;
    double kappa3_n0 = 0.0;
    double kappa4_n0 = 0.0; // may underflow
    double kappa5_n0 = 0.0; // max-case value at n0 (1 - deficiency)
    double C1 = 0.0;        // may overflow; log_C1 is authoritative
    double log_C1 = 0.0;
    double C2 = 0.0;        // may underflow; log_C2 is authoritative
    double log_C2 = 0.0;
    bool degenerate_l1 = false; // eps came from the kappa3 budget, not the L1 cap
};

// M_V with {V <= 4 K_V} = {|q|_g <= M_V}, closed form per Lyapunov kind.
inline double level_set_radius(const LyapunovSpec &lspec, const DriftConstants &dc) {
    if (lspec.kind == LyapunovKind::Poly)
        return std::pow(4.0 * dc.K_V, 1.0 / lspec.poly_i);
    const double l = std::log(4.0) + dc.log_K_V;
    if (l <= 0.0)
        throw NoSpectralGap("exp Lyapunov level set 4 K_V < 1 is empty");
    return std::sqrt(l / lspec.eta);
}

// Assembles eps, beta, n0, kappa5(n0), C1, C2 per the explicit recipes. The
// C2 > 0 assertion is done in log space; NoSpectralGap signals kappa5 >= 1.
inline HarrisConstants harris_constants(const CovarianceSpectrum &spec,
                                        const PotentialModel &pot, double T,
                                        const LyapunovSpec &lspec,
                                        Rng *search_rng = nullptr) {
    const PotentialConstants pk = pot.constants();
    TimeBudget tb = admissible_times(spec, pot);
    if (T > tb.T_max_basic)
        throw TimeConditionViolated("T exceeds the assembly time bound");
    const std::size_t N = tb.N_min_contraction;
    KappaCalculator kc(spec, pot, T, N);
    DriftConstants dc = drift_constants(spec, pot, lspec, T, search_rng);

    HarrisConstants hc;
    hc.T = T;
    hc.N = N;
    hc.alpha = kc.alpha();
    hc.kappa1 = kc.kappa1();
    hc.kappa_V = dc.kappa_V;
    hc.K_V = dc.K_V;
    hc.M_V = level_set_radius(lspec, dc);

    const double one_m_k1sq = 1.0 - hc.kappa1 * hc.kappa1;
    const double sqrt_term = T * std::sqrt(one_m_k1sq);

    // eps: the L1-based cap when L1 > 0, intersected with the kappa3 budget
    // (cost of control <= 1/8). With L1 = 0 the cap is vacuous and the budget
    // alone fixes eps; flag that.
    const double eps_budget =
        sqrt_term / (4.0 * std::sqrt(2.0) * kc.lambdaN_pow() * hc.alpha);
    double eps = eps_budget;
    if (pk.L1 > 0.0) {
        const double eps_paper =
            sqrt_term / (8.0 * std::sqrt(2.0) * hc.alpha * std::sqrt(pk.L1));
        eps = std::min(eps_paper, eps_budget);
        hc.degenerate_l1 = eps_budget < eps_paper;
    } else {
        hc.degenerate_l1 = true;
    }
    hc.epsilon = eps;

    // beta <= exp(-E4) / (12 K_V), taken with equality.
    const double E4 = kc.kappa4_exponent(hc.M_V);
    hc.log_beta = -E4 - std::log(12.0) - dc.log_K_V;
    hc.beta = std::exp(hc.log_beta);

    // n0: kappa1^n <= min{ 1/(4 sqrt2 alpha), eps exp(-E4)/(8 sqrt2 alpha M_V) }
    // and kappa_V^n <= 1/8.
    const double log_k1 = std::log(hc.kappa1);
    const double log_kV = std::log(hc.kappa_V);
    const double c1 = std::log(4.0 * std::sqrt(2.0) * hc.alpha) / (-log_k1);
    const double c2 =
        (std::log(8.0 * std::sqrt(2.0) * hc.alpha * hc.M_V / eps) + E4) / (-log_k1);
    const double c3 = std::log(8.0) / (-log_kV);
    const double n0d = std::ceil(std::max({c1, c2, c3, 1.0}));
    if (!(n0d < 9e18))
        throw NoSpectralGap("n0 does not fit in 64 bits");
    hc.n0 = static_cast<std::uint64_t>(n0d);

    // Deficiency d(n) = -log kappa5(n)^2 = min_i of -log(case_i), carried as
    // log d(n) because the binding cases shrink like exp(-E4):
    //   case1: (1 + 2 beta K_V) kappa3(n)
    //   case2: max{ (1 + 2 bK)/(1 + 3 bK), 4 kappa_V^n }
    //   case3: (1 - kappa4(n)) (1 + 2 (1 + 2 kappa_V^n) beta K_V)
    // Returns -inf when some case is >= 1 (no contraction at this n).
    const double log_bK = hc.log_beta + dc.log_K_V; // == -E4 - log 12
    const double neg_inf = -std::numeric_limits<double>::infinity();
    auto deficiency_log = [&](double n) -> double {
        const double k3 = kc.kappa3(n, eps);
        const double kVn = std::exp(n * log_kV);
        if (E4 < 30.0) {
            const double bK = std::exp(log_bK);
            const double case1 = (1.0 + 2.0 * bK) * k3;
            const double case2 =
                std::max((1.0 + 2.0 * bK) / (1.0 + 3.0 * bK), 4.0 * kVn);
            const double k4 = kc.kappa4(n, hc.M_V, eps);
            const double case3 = (1.0 - k4) * (1.0 + 2.0 * (1.0 + 2.0 * kVn) * bK);
            const double worst = std::max({case1, case2, case3});
            return worst < 1.0 ? std::log(-std::log(worst)) : neg_inf;
        }
        // exp(-E4) underflows: leading-order deficiencies, each a positive
        // multiple of exp(-E4) once n >= n0.
        const double def1 = k3 < 1.0 ? -std::log(k3) : -1.0; // O(1)
        if (def1 <= 0.0 || 4.0 * kVn >= 1.0)
            return neg_inf;
        const double log_def1 = std::log(def1);
        const double log_def2 = log_bK; // def2 ~ beta K_V
        // def3 ~ kappa4(n) - (2 + 4 kVn) bK = exp(-E4) (a - b)
        const double a = 0.5 - 2.0 * std::sqrt(2.0) * hc.alpha * hc.M_V *
                                   std::exp(n * log_k1 + E4) / eps;
        const double b = (2.0 + 4.0 * kVn) / 12.0;
        const double log_def3 = a > b ? std::log(a - b) - E4 : neg_inf;
        return std::min({log_def1, log_def2, log_def3});
    };

    const double n0f = static_cast<double>(hc.n0);
    const double log_def_n0 = deficiency_log(n0f);
    if (log_def_n0 == neg_inf)
        throw NoSpectralGap("assembled kappa5(n0) >= 1");

    hc.kappa2_n0 = kc.kappa2(n0f);
    hc.kappa3_n0 = kc.kappa3(n0f, eps);
    hc.kappa4_n0 = kc.kappa4(n0f, hc.M_V, eps);
    // kappa5(n0) = exp(-deficiency/2); rounds to 1.0 once E4 is large.
    hc.kappa5_n0 = std::exp(-0.5 * std::exp(log_def_n0));

    // C2 = -log kappa5(n0) / n0 = deficiency / (2 n0) > 0, asserted in logs.
    hc.log_C2 = log_def_n0 - std::log(2.0) - std::log(n0f);
    hc.C2 = std::exp(hc.log_C2);

    // C1 = sqrt(max{1,beta}/min{1,beta}) kappa5(n0-1)/kappa5(n0); beta < 1 in
    // practice so the sqrt(1/beta) factor dominates. log kappa5(n0-1) is
    // evaluated directly below threshold, and is O(exp(-E4)) above it.
    double log_k5_prev = 0.0;
    const double n_prev = std::max(0.0, n0f - 1.0);
    const double log_def_prev = deficiency_log(n_prev);
    if (log_def_prev != neg_inf) {
        log_k5_prev = -0.5 * std::exp(log_def_prev);
    } else if (E4 < 30.0) {
        const double bK = std::exp(log_bK);
        const double kVn = std::exp(n_prev * log_kV);
        const double case1 = (1.0 + 2.0 * bK) * kc.kappa3(n_prev, eps);
        const double case2 = std::max((1.0 + 2.0 * bK) / (1.0 + 3.0 * bK), 4.0 * kVn);
        const double case3 = (1.0 - kc.kappa4(n_prev, hc.M_V, eps)) *
                             (1.0 + 2.0 * (1.0 + 2.0 * kVn) * bK);
        log_k5_prev = 0.5 * std::log(std::max({case1, case2, case3}));
    }
    const double log_k5_n0 = -0.5 * std::exp(log_def_n0);
    hc.log_C1 = 0.5 * std::abs(hc.log_beta) + log_k5_prev - log_k5_n0;
    hc.C1 = std::exp(hc.log_C1);
    return hc;
}

} // namespace hhmc

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>

#include "hhmc/potential.hpp"
#include "hhmc/spectral.hpp"

namespace hhmc {

struct PhasePoint {
    Field q;
    Field v;
};

enum class FlowMethod { RotationSplitting, ReferenceRk };

struct FlowConfig {
    double tol = 1e-10;
    FlowMethod method = FlowMethod::RotationSplitting;
    // 0 means "derive from T and the declared constants".
    std::size_t substeps = 0;
    std::size_t max_substeps = std::size_t(1) << 22;
    // When false, run exactly `substeps` without the step-doubling ladder
    // (used after calibrate_substeps has fixed a count meeting tol).
    bool ladder = true;
};

inline std::size_t default_substeps(const CovarianceSpectrum &spec,
                                    const PotentialModel &pot, double T) {
    const double c =
        1.0 + std::pow(spec.lambda1(), 1.0 - 2.0 * spec.gamma()) * pot.constants().L1;
    return static_cast<std::size_t>(std::ceil(20.0 * T * c)) + 1;
}

namespace detail {

// Exact rotation of the linear part: (q,v) -> (q cos h + v sin h,
// -q sin h + v cos h), applied coordinate-wise.
inline void rotate(PhasePoint &p, double h) {
    const double c = std::cos(h), s = std::sin(h);
    for (std::size_t i = 0; i < p.q.size(); ++i) {
        const double q = p.q[i], v = p.v[i];
        p.q[i] = q * c + v * s;
        p.v[i] = -q * s + v * c;
    }
}

inline void kick(const CovarianceSpectrum &spec, const PotentialModel &pot,
                 PhasePoint &p, double h, Field &scratch) {
    pot.grad_into(p.q, scratch);
    for (std::size_t i = 0; i < p.q.size(); ++i)
        p.v[i] -= h * spec.eigenvalue(i) * scratch[i];
}

// Strang arrangement: half kick, (rotate, kick)^{n-1}, rotate, half kick.
inline PhasePoint splitting_pass(const CovarianceSpectrum &spec,
                                 const PotentialModel &pot, PhasePoint p,
                                 double T, std::size_t n) {
    const double h = T / static_cast<double>(n);
    Field scratch(p.q.size());
    kick(spec, pot, p, 0.5 * h, scratch);
    for (std::size_t s = 0; s + 1 < n; ++s) {
        rotate(p, h);
        kick(spec, pot, p, h, scratch);
    }
    rotate(p, h);
    kick(spec, pot, p, 0.5 * h, scratch);
    return p;
}

inline PhasePoint rk4_pass(const CovarianceSpectrum &spec,
                           const PotentialModel &pot, PhasePoint p, double T,
                           std::size_t n) {
    const double h = T / static_cast<double>(n);
    const std::size_t D = p.q.size();
    auto accel = [&](const Field &q) {
        Field g = pot.grad(q);
        Field a(D);
        for (std::size_t i = 0; i < D; ++i)
            a[i] = -q[i] - spec.eigenvalue(i) * g[i];
        return a;
    };
    for (std::size_t s = 0; s < n; ++s) {
        const Field k1q = p.v, k1v = accel(p.q);
        const Field q2 = axpy(0.5 * h, k1q, p.q), v2 = axpy(0.5 * h, k1v, p.v);
        const Field k2q = v2, k2v = accel(q2);
        const Field q3 = axpy(0.5 * h, k2q, p.q), v3 = axpy(0.5 * h, k2v, p.v);
        const Field k3q = v3, k3v = accel(q3);
        const Field q4 = axpy(h, k3q, p.q), v4 = axpy(h, k3v, p.v);
        const Field k4q = v4, k4v = accel(q4);
        for (std::size_t i = 0; i < D; ++i) {
            p.q[i] += h / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
            p.v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
    }
    return p;
}

inline double phase_distance0(const PhasePoint &a, const PhasePoint &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.q.size(); ++i) {
        const double dq = a.q[i] - b.q[i], dv = a.v[i] - b.v[i];
        s += dq * dq + dv * dv;
    }
    return std::sqrt(s);
}

} // namespace detail

// Integrates dq/dt = v, dv/dt = -q - C DU(q) over [0, T]. The linear part is
// rotated exactly, so U == 0 incurs no time-discretization error. Substeps
// double until the step-doubling error estimate is below tol.
inline PhasePoint flow(const CovarianceSpectrum &spec, const PotentialModel &pot,
                       const PhasePoint &p0, double T, const FlowConfig &cfg = {}) {
    spec.check_dim(p0.q);
    spec.check_dim(p0.v);
    if (cfg.method == FlowMethod::ReferenceRk) {
        std::size_t n = cfg.substeps ? cfg.substeps : default_substeps(spec, pot, T);
        PhasePoint out = detail::rk4_pass(spec, pot, p0, T, 10 * n);
        if (!all_finite(out.q) || !all_finite(out.v))
            throw NonFinite("reference_rk flow blew up");
        return out;
    }
    // U == 0: the splitting is exact with a single substep.
    if (pot.constants().L1 == 0.0 && pot.constants().L0 == 0.0) {
        PhasePoint out = p0;
        detail::rotate(out, T);
        return out;
    }
    std::size_t n = cfg.substeps ? cfg.substeps : default_substeps(spec, pot, T);
    if (!cfg.ladder) {
        PhasePoint out = detail::splitting_pass(spec, pot, p0, T, n);
        if (!all_finite(out.q) || !all_finite(out.v))
            throw NonFinite("flow blew up under the supplied potential");
        return out;
    }
    PhasePoint coarse = detail::splitting_pass(spec, pot, p0, T, n);
    double prev_est = std::numeric_limits<double>::infinity();
    for (;;) {
        PhasePoint fine = detail::splitting_pass(spec, pot, p0, T, 2 * n);
        if (!all_finite(fine.q) || !all_finite(fine.v))
            throw NonFinite("flow blew up under the supplied potential");
        const double est = detail::phase_distance0(coarse, fine);
        if (est <= cfg.tol)
            return fine;
        // Second-order decay has stopped: the estimate sits on the rounding
        // floor and more substeps only accumulate roundoff.
        if (est >= 0.5 * prev_est)
            return fine;
        n *= 2;
        if (n > cfg.max_substeps)
            throw ToleranceNotMet("substep cap reached, estimate " + std::to_string(est));
        prev_est = est;
        coarse = fine;
    }
}

// One ladder run at a representative state; returns a substep count whose
// doubling estimate met tol there. Long chains calibrate once and then run
// with cfg.ladder = false.
inline std::size_t calibrate_substeps(const CovarianceSpectrum &spec,
                                      const PotentialModel &pot,
                                      const PhasePoint &p_repr, double T,
                                      const FlowConfig &cfg = {}) {
    if (pot.constants().L1 == 0.0 && pot.constants().L0 == 0.0)
        return 1;
    std::size_t n = cfg.substeps ? cfg.substeps : default_substeps(spec, pot, T);
    PhasePoint coarse = detail::splitting_pass(spec, pot, p_repr, T, n);
    double prev_est = std::numeric_limits<double>::infinity();
    for (;;) {
        PhasePoint fine = detail::splitting_pass(spec, pot, p_repr, T, 2 * n);
        if (!all_finite(fine.q) || !all_finite(fine.v))
            throw NonFinite("calibration flow blew up");
        const double est = detail::phase_distance0(coarse, fine);
        if (est <= cfg.tol || est >= 0.5 * prev_est)
            return 2 * n;
        n *= 2;
        if (n > cfg.max_substeps)
            throw ToleranceNotMet("substep cap reached during calibration");
        prev_est = est;
        coarse = fine;
    }
}

// Closed-form flow for DU(q) = B q with B diagonal in the eigenbasis:
// coordinate-wise rotation with frequency omega_i = sqrt(1 + lambda_i B_i).
inline PhasePoint flow_linear_exact(const CovarianceSpectrum &spec,
                                    const std::vector<double> &B,
                                    const PhasePoint &p0, double T) {
    spec.check_dim(p0.q);
    if (B.size() != spec.dim())
        throw DimensionMismatch("B must have length D");
    PhasePoint out = p0;
    for (std::size_t i = 0; i < B.size(); ++i) {
        const double w2 = 1.0 + spec.eigenvalue(i) * B[i];
        if (!(w2 > 0.0))
            throw NegativeFrequencySquared("1 + lambda_i B_i must be positive");
        const double w = std::sqrt(w2);
        const double c = std::cos(w * T), s = std::sin(w * T);
        const double q = p0.q[i], v = p0.v[i];
        out.q[i] = q * c + v * s / w;
        out.v[i] = -q * w * s + v * c;
    }
    return out;
}

// Energy of the flow, restricted to the first N_h modes. The quadratic terms
// follow the kernel's normalization <C^{-1}q,q> + <C^{-1}v,v>; the potential
// enters with weight 2 so the sum is a flow invariant (d/dt of the displayed
// sum is -<DU,v> + <DU,v> = 0).
inline double hamiltonian(const CovarianceSpectrum &spec, const PotentialModel &pot,
                          const PhasePoint &p, std::size_t N_h) {
    spec.check_dim(p.q);
    if (N_h < 1 || N_h > spec.dim())
        throw BadN("hamiltonian needs 1 <= N_h <= D");
    double s = 0.0;
    for (std::size_t i = 0; i < N_h; ++i)
        s += (p.q[i] * p.q[i] + p.v[i] * p.v[i]) / spec.eigenvalue(i);
    return s + 2.0 * pot.evaluate(p.q);
}

struct AprioriReport {
    double time_bound = 0.0;      // (1 + lambda_1^{1-2g} L1)^{-1/2}
    double lhs_sup_q = 0.0;       // sup_t |q_t - (q_0 + t v_0)|_g
    double rhs_q = 0.0;
    double lhs_sup_v = 0.0;       // sup_t |v_t - v_0|_g
    double rhs_v = 0.0;
    double margin_q = 0.0;        // rhs - lhs, nonnegative when the bound holds
    double margin_v = 0.0;
};

// Checks the a priori position/velocity bounds along a dense time grid.
inline AprioriReport apriori_check(const CovarianceSpectrum &spec,
                                   const PotentialModel &pot, const PhasePoint &p0,
                                   double T, std::size_t grid = 64,
                                   const FlowConfig &cfg = {}) {
    const double g = spec.gamma();
    const double c1 = 1.0 + std::pow(spec.lambda1(), 1.0 - 2.0 * g) * pot.constants().L1;
    AprioriReport rep;
    rep.time_bound = 1.0 / std::sqrt(c1);
    if (T > rep.time_bound)
        throw TimeConditionViolated("T exceeds (1 + lambda_1^{1-2g} L1)^{-1/2}");

    const double q0n = gamma_norm(spec, g, p0.q);
    const double qTn = gamma_norm(spec, g, axpy(T, p0.v, p0.q));
    const double peak = std::max(q0n, qTn);
    const double l0term = std::pow(spec.lambda1(), 1.0 - 2.0 * g) * pot.constants().L0;
    rep.rhs_q = c1 * T * T * peak + l0term * T * T;
    rep.rhs_v = c1 * T * (1.0 + c1 * T * T) * peak + l0term * T * (1.0 + c1 * T * T);

    for (std::size_t k = 1; k <= grid; ++k) {
        const double t = T * static_cast<double>(k) / static_cast<double>(grid);
        PhasePoint pt = flow(spec, pot, p0, t, cfg);
        Field drift = sub(pt.q, axpy(t, p0.v, p0.q));
        rep.lhs_sup_q = std::max(rep.lhs_sup_q, gamma_norm(spec, g, drift));
        rep.lhs_sup_v = std::max(rep.lhs_sup_v, gamma_norm(spec, g, sub(pt.v, p0.v)));
    }
    rep.margin_q = rep.rhs_q - rep.lhs_sup_q;
    rep.margin_v = rep.rhs_v - rep.lhs_sup_v;
    return rep;
}

} // namespace hhmc

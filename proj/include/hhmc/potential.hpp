#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "hhmc/spectral.hpp"

namespace hhmc {

// Declared regularity/dissipativity constants of a potential:
//   L0 >= |DU(0)|_{-gamma},
//   L1 >= sup |C^gamma D^2U C^gamma|,
//   L2, L3: |f|_g^2 + <f, C DU(f)>_g >= L2 |f|_g^2 - L3.
struct PotentialConstants {
    double L0 = 0.0;
    double L1 = 0.0;
    double L2 = 1.0;
    double L3 = 0.0;
};

// Target potential U. grad() returns DU as a coefficient sequence against the
// eigenbasis (the Riesz representative in H_0); the dynamics only ever uses
// C DU, which is then a diagonal multiply.
class PotentialModel {
  public:
    virtual ~PotentialModel() = default;
    virtual double evaluate(const Field &q) const = 0;
    virtual Field grad(const Field &q) const = 0;
    // Allocation-free variant for integrator inner loops.
    virtual void grad_into(const Field &q, Field &out) const { out = grad(q); }
    virtual double hess_dir(const Field &q, const Field &xi,
                            const Field &xi2) const {
        // Symmetric finite-difference fallback along xi2.
        const double h = 1e-5;
        Field qp = axpy(h, xi2, q), qm = axpy(-h, xi2, q);
        Field gp = grad(qp), gm = grad(qm);
        double s = 0.0;
        for (std::size_t i = 0; i < xi.size(); ++i)
            s += (gp[i] - gm[i]) * xi[i];
        return s / (2.0 * h);
    }
    virtual PotentialConstants constants() const = 0;
};

class ZeroPotential final : public PotentialModel {
  public:
    double evaluate(const Field &) const override { return 0.0; }
    Field grad(const Field &q) const override { return Field(q.size(), 0.0); }
    void grad_into(const Field &, Field &out) const override {
        std::fill(out.begin(), out.end(), 0.0);
    }
    double hess_dir(const Field &, const Field &, const Field &) const override {
        return 0.0;
    }
    PotentialConstants constants() const override { return {0.0, 0.0, 1.0, 0.0}; }
};

// U(q) = 1/2 sum_i b_i q_i^2 with b_i >= 0, diagonal in the eigenbasis. The
// whole quadratic family has closed-form flow, stationary law and Lyapunov
// action, so it serves as the oracle target throughout.
class QuadraticPotential final : public PotentialModel {
  public:
    QuadraticPotential(const CovarianceSpectrum &spec, std::vector<double> b)
        : b_(std::move(b)) {
        if (b_.size() != spec.dim())
            throw DimensionMismatch("quadratic coefficients must have length D");
        const double g = spec.gamma();
        double l1 = 0.0, l2shift = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < b_.size(); ++i) {
            if (b_[i] < 0.0)
                throw ConfigInvalid("quadratic coefficients must be >= 0");
            const double li = spec.eigenvalue(i);
            l1 = std::max(l1, std::pow(li, 2.0 * g) * b_[i]);
            l2shift = std::min(l2shift, std::pow(li, 1.0 - 2.0 * g) * b_[i]);
        }
        constants_ = {0.0, l1, 1.0 + l2shift, 0.0};
    }

    QuadraticPotential(const CovarianceSpectrum &spec, double b_uniform)
        : QuadraticPotential(spec, std::vector<double>(spec.dim(), b_uniform)) {}

    double evaluate(const Field &q) const override {
        double s = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i)
            s += b_[i] * q[i] * q[i];
        return 0.5 * s;
    }

    Field grad(const Field &q) const override {
        Field g(q.size());
        grad_into(q, g);
        return g;
    }

    void grad_into(const Field &q, Field &out) const override {
        for (std::size_t i = 0; i < q.size(); ++i)
            out[i] = b_[i] * q[i];
    }

    double hess_dir(const Field &, const Field &xi, const Field &xi2) const override {
        double s = 0.0;
        for (std::size_t i = 0; i < xi.size(); ++i)
            s += b_[i] * xi[i] * xi2[i];
        return s;
    }

    PotentialConstants constants() const override { return constants_; }
    const std::vector<double> &coefficients() const { return b_; }

  private:
    std::vector<double> b_;
    PotentialConstants constants_;
};

struct PotentialAuditReport {
    double max_grad_fd_rel_err = 0.0;  // grad vs central differences of evaluate
    double max_hess_asymmetry = 0.0;   // |hess(xi,xi2) - hess(xi2,xi)|
    double max_observed_l1 = 0.0;      // |C^g D^2U C^g| probe vs declared L1
    bool l1_dominates = true;
};

// Spot audit of a user-declared potential: gradient against finite
// differences of evaluate, Hessian symmetry, and random Hessian probes
// against the declared L1.
inline PotentialAuditReport audit_potential(const CovarianceSpectrum &spec,
                                            const PotentialModel &pot, Rng &rng,
                                            int n_points = 8, double h = 1e-5) {
    PotentialAuditReport rep;
    const double g = spec.gamma();
    for (int p = 0; p < n_points; ++p) {
        Field q = sample_gaussian(spec, rng);
        Field grad = pot.grad(q);
        // <grad, xi> vs (U(q + h xi) - U(q - h xi)) / 2h on a few directions.
        for (int d = 0; d < 3; ++d) {
            Field xi = sample_gaussian(spec, rng);
            double dir = 0.0;
            for (std::size_t i = 0; i < xi.size(); ++i)
                dir += grad[i] * xi[i];
            const double fd =
                (pot.evaluate(axpy(h, xi, q)) - pot.evaluate(axpy(-h, xi, q))) /
                (2.0 * h);
            const double scale = std::max({1.0, std::abs(dir), std::abs(fd)});
            rep.max_grad_fd_rel_err =
                std::max(rep.max_grad_fd_rel_err, std::abs(dir - fd) / scale);
        }
        // Probe |C^g D^2U C^g| with unit vectors xi in H: value is
        // hess_dir(q, C^g u, C^g w) for |u| = |w| = 1.
        for (int d = 0; d < 3; ++d) {
            Field u = sample_gaussian(spec, rng), w = sample_gaussian(spec, rng);
            double nu = gamma_norm(spec, 0.0, u), nw = gamma_norm(spec, 0.0, w);
            if (nu == 0.0 || nw == 0.0)
                continue;
            u = scaled(1.0 / nu, u);
            w = scaled(1.0 / nw, w);
            Field cu = fractional_apply(spec, g, u), cw = fractional_apply(spec, g, w);
            const double hv = pot.hess_dir(q, cu, cw);
            const double hv2 = pot.hess_dir(q, cw, cu);
            rep.max_hess_asymmetry =
                std::max(rep.max_hess_asymmetry, std::abs(hv - hv2));
            rep.max_observed_l1 = std::max(rep.max_observed_l1, std::abs(hv));
        }
    }
    rep.l1_dominates = rep.max_observed_l1 <= pot.constants().L1 * (1.0 + 1e-8) + 1e-12;
    return rep;
}

} // namespace hhmc

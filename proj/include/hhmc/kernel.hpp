#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "hhmc/flow.hpp"
#include "hhmc/potential.hpp"
#include "hhmc/rng.hpp"
#include "hhmc/spectral.hpp"

namespace hhmc {

struct ChainState {
    Field q;
    std::uint64_t step_index = 0;
    std::uint64_t rng_cursor = 0;
};

// Admissible integration times computed from the declared constants.
struct TimeBudget {
    double T_max_basic = 0.0;    // infinite-dimensional kernel
    double T_max_lyapunov = 0.0; // drift estimates use the same restriction
    double T_max_fd = 0.0;       // finite-dimensional mass-matrix variant
    std::size_t N_min_contraction = 1;
};

struct MassMatrix {
    std::vector<double> diag;

    explicit MassMatrix(std::vector<double> d) : diag(std::move(d)) {
        for (double m : diag)
            if (!(m > 0.0))
                throw ConfigInvalid("mass matrix entries must be positive");
    }

    double min() const {
        double v = diag[0];
        for (double m : diag)
            v = std::min(v, m);
        return v;
    }
    double max() const {
        double v = diag[0];
        for (double m : diag)
            v = std::max(v, m);
        return v;
    }
    double trace() const {
        double s = 0.0;
        for (double m : diag)
            s += m;
        return s;
    }
};

// One step of the preconditioned HMC kernel: draw v0 ~ N(0,C), run the flow
// for time T, keep the position. The Gaussian draw is returned through
// *noise_out when couplings need to replay it.
inline ChainState hmc_step(const CovarianceSpectrum &spec, const PotentialModel &pot,
                           const ChainState &state, double T, const FlowConfig &cfg,
                           Rng &rng, Field *noise_out = nullptr) {
    Field v0 = sample_gaussian(spec, rng);
    if (noise_out)
        *noise_out = v0;
    PhasePoint p = flow(spec, pot, {state.q, std::move(v0)}, T, cfg);
    return {std::move(p.q), state.step_index + 1, rng.cursor()};
}

// n-step trajectory; records every `thin`-th position (thin = 1 keeps all).
inline std::vector<Field> run_chain(const CovarianceSpectrum &spec,
                                    const PotentialModel &pot, const Field &q0,
                                    std::size_t n_steps, double T,
                                    const FlowConfig &cfg, Rng &rng,
                                    std::size_t thin = 1,
                                    std::size_t burn_in = 0) {
    if (n_steps < 1)
        throw ConfigInvalid("run_chain needs n_steps >= 1");
    if (thin < 1)
        thin = 1;
    ChainState st{q0, 0, 0};
    std::vector<Field> traj;
    traj.reserve((n_steps + thin - 1) / thin);

    // Calibrate the substep count once at the start state plus a typical
    // velocity; the ladder re-runs only if the chain outgrows that scale.
    FlowConfig run_cfg = cfg;
    double calib_scale = 0.0;
    auto recalibrate = [&](const Field &q) {
        Rng probe = rng.child("calibration", st.step_index);
        PhasePoint repr{q, sample_gaussian(spec, probe)};
        run_cfg.substeps = calibrate_substeps(spec, pot, repr, T, cfg);
        run_cfg.ladder = false;
        calib_scale = gamma_norm(spec, 0.0, q) + gamma_norm(spec, 0.0, repr.v);
    };
    if (cfg.method == FlowMethod::RotationSplitting && cfg.ladder)
        recalibrate(q0);

    const std::size_t total = burn_in + n_steps;
    for (std::size_t k = 1; k <= total; ++k) {
        st = hmc_step(spec, pot, st, T, run_cfg, rng);
        if (!run_cfg.ladder) {
            const double scale = gamma_norm(spec, 0.0, st.q);
            if (scale > 2.0 * calib_scale)
                recalibrate(st.q);
        }
        if (k > burn_in && (k - burn_in) % thin == 0)
            traj.push_back(st.q);
    }
    return traj;
}

// Finite-dimensional HMC with diagonal mass matrix M and diagonal covariance:
// dq/dt = M^{-1} p, dp/dt = -C^{-1} q - DU(q), p0 ~ N(0, M). The linear part
// rotates each coordinate exactly with frequency (M_i C_i)^{-1/2}.
inline Field fd_hmc_step(const MassMatrix &mass, const CovarianceSpectrum &c_fd,
                         const PotentialModel &pot, const Field &q, double T,
                         Rng &rng, Field *noise_out = nullptr,
                         std::size_t substeps = 0, bool check_time = true,
                         double tol = 1e-10) {
    if (mass.diag.size() != c_fd.dim())
        throw DimensionMismatch("mass matrix and covariance dims differ");
    c_fd.check_dim(q);
    const double lM = mass.min(), LM = mass.max();
    const double lC = c_fd.lambda_min(), LC = c_fd.lambda1();
    const double L1 = pot.constants().L1, L2 = pot.constants().L2;
    if (check_time) {
        const double a = lM == 0.0 ? 0.0 : (1.0 / lC + L1) / lM;
        const double t1 = 1.0 / std::sqrt(2.0 * a);
        const double t2 = std::sqrt(L2) / (std::sqrt(LM * LC) * 2.0 * std::sqrt(6.0) * a);
        if (T > std::min(t1, t2))
            throw TimeConditionViolated("T exceeds the finite-dimensional bound");
    }

    const std::size_t D = q.size();
    Field p(D);
    for (std::size_t i = 0; i < D; ++i)
        p[i] = std::sqrt(mass.diag[i]) * rng.gaussian();
    if (noise_out)
        *noise_out = p;

    std::vector<double> omega(D);
    for (std::size_t i = 0; i < D; ++i)
        omega[i] = 1.0 / std::sqrt(mass.diag[i] * c_fd.eigenvalue(i));

    auto rotate = [&](Field &qq, Field &pp, double h) {
        for (std::size_t i = 0; i < D; ++i) {
            const double w = omega[i], c = std::cos(w * h), s = std::sin(w * h);
            const double qi = qq[i], pi = pp[i];
            qq[i] = qi * c + pi * s / (mass.diag[i] * w);
            pp[i] = -qi * mass.diag[i] * w * s + pi * c;
        }
    };
    auto kick = [&](const Field &qq, Field &pp, double h) {
        Field g = pot.grad(qq);
        for (std::size_t i = 0; i < D; ++i)
            pp[i] -= h * g[i];
    };

    if (pot.constants().L1 == 0.0 && pot.constants().L0 == 0.0) {
        Field qq = q;
        Field pp = p;
        rotate(qq, pp, T);
        return qq;
    }
    auto strang = [&](std::size_t n) {
        std::pair<Field, Field> st{q, p};
        const double h = T / static_cast<double>(n);
        kick(st.first, st.second, 0.5 * h);
        for (std::size_t s = 0; s + 1 < n; ++s) {
            rotate(st.first, st.second, h);
            kick(st.first, st.second, h);
        }
        rotate(st.first, st.second, h);
        kick(st.first, st.second, 0.5 * h);
        return st;
    };
    auto dist = [](const std::pair<Field, Field> &a, const std::pair<Field, Field> &b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.first.size(); ++i) {
            const double dq = a.first[i] - b.first[i];
            const double dp = a.second[i] - b.second[i];
            s += dq * dq + dp * dp;
        }
        return std::sqrt(s);
    };
    std::size_t n = substeps ? substeps : default_substeps(c_fd, pot, T);
    auto coarse = strang(n);
    double prev_est = std::numeric_limits<double>::infinity();
    for (;;) {
        auto fine = strang(2 * n);
        if (!all_finite(fine.first))
            throw NonFinite("fd_hmc_step blew up");
        const double est = dist(coarse, fine);
        if (est <= tol || est >= 0.5 * prev_est)
            return fine.first;
        n *= 2;
        if (n > (std::size_t(1) << 22))
            throw ToleranceNotMet("fd substep cap reached");
        prev_est = est;
        coarse = fine;
    }
}

// T budgets and the contraction mode count, straight from the declared
// constants. N_min is the smallest N >= 1 with lambda_{N+1}^{1-2g} <= 1/(4 L1),
// reading lambda_{D+1} = 0 on the truncation; L1 = 0 makes N = 1 sufficient.
inline TimeBudget admissible_times(const CovarianceSpectrum &spec,
                                   const PotentialModel &pot,
                                   const MassMatrix *mass = nullptr) {
    const PotentialConstants k = pot.constants();
    if (!std::isfinite(k.L1) || !std::isfinite(k.L2) || k.L2 <= 0.0)
        throw MissingConstants("potential must declare finite L1 and positive L2");
    const double g = spec.gamma();
    const double c1 = 1.0 + std::pow(spec.lambda1(), 1.0 - 2.0 * g) * k.L1;

    TimeBudget out;
    out.T_max_basic =
        std::min(1.0 / std::sqrt(2.0 * c1), std::sqrt(k.L2) / (2.0 * std::sqrt(6.0) * c1));
    out.T_max_lyapunov = out.T_max_basic;

    if (k.L1 == 0.0) {
        out.N_min_contraction = 1;
    } else {
        const double cap = 1.0 / (4.0 * k.L1);
        std::size_t N = spec.dim(); // lambda_{D+1} = 0 always satisfies the cap
        for (std::size_t n = 1; n <= spec.dim(); ++n) {
            const double lam_next =
                n < spec.dim() ? std::pow(spec.eigenvalue(n), 1.0 - 2.0 * g) : 0.0;
            if (lam_next <= cap) {
                N = n;
                break;
            }
        }
        out.N_min_contraction = N;
    }

    if (mass) {
        const double lM = mass->min(), LM = mass->max();
        const double lC = spec.lambda_min(), LC = spec.lambda1();
        const double a = (1.0 / lC + k.L1) / lM;
        out.T_max_fd = std::min(1.0 / std::sqrt(2.0 * a),
                                std::sqrt(k.L2 / (LM * LC)) / (2.0 * std::sqrt(6.0) * a));
    }
    return out;
}

// --- trajectory persistence ------------------------------------------------

// CSV: one row per recorded step; columns: step, seed, then D coefficients.
inline void write_trajectory_csv(const std::string &path,
                                 const std::vector<Field> &traj,
                                 std::uint64_t seed) {
    std::ofstream out(path);
    if (!out)
        throw ConfigInvalid("cannot open " + path);
    out << "step,seed";
    if (!traj.empty())
        for (std::size_t i = 0; i < traj.front().size(); ++i)
            out << ",c" << i;
    out << "\n";
    out.precision(17);
    for (std::size_t k = 0; k < traj.size(); ++k) {
        out << k << "," << seed;
        for (double x : traj[k])
            out << "," << x;
        out << "\n";
    }
}

// Binary checkpoint: magic "HHMCTRAJ", u32 version, u64 D, u64 n, then
// n*D little-endian 64-bit floats, row-major.
inline void write_trajectory_checkpoint(const std::string &path,
                                        const std::vector<Field> &traj) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigInvalid("cannot open " + path);
    const char magic[8] = {'H', 'H', 'M', 'C', 'T', 'R', 'A', 'J'};
    const std::uint32_t version = 1;
    const std::uint64_t D = traj.empty() ? 0 : traj.front().size();
    const std::uint64_t n = traj.size();
    out.write(magic, 8);
    out.write(reinterpret_cast<const char *>(&version), sizeof version);
    out.write(reinterpret_cast<const char *>(&D), sizeof D);
    out.write(reinterpret_cast<const char *>(&n), sizeof n);
    for (const Field &row : traj)
        out.write(reinterpret_cast<const char *>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double)));
}

inline std::vector<Field> read_trajectory_checkpoint(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigInvalid("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::string(magic, 8) != "HHMCTRAJ")
        throw ConfigInvalid("bad checkpoint magic in " + path);
    std::uint32_t version = 0;
    std::uint64_t D = 0, n = 0;
    in.read(reinterpret_cast<char *>(&version), sizeof version);
    in.read(reinterpret_cast<char *>(&D), sizeof D);
    in.read(reinterpret_cast<char *>(&n), sizeof n);
    if (version != 1)
        throw ConfigInvalid("unsupported checkpoint version");
    std::vector<Field> traj(n, Field(D));
    for (auto &row : traj) {
        in.read(reinterpret_cast<char *>(row.data()),
                static_cast<std::streamsize>(D * sizeof(double)));
        if (!in)
            throw ConfigInvalid("truncated checkpoint " + path);
    }
    return traj;
}

} // namespace hhmc

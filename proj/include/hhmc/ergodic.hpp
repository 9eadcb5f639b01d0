#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "hhmc/lyapunov.hpp"
#include "hhmc/spectral.hpp"

namespace hhmc {

// Scalar observable with optional gradient and declared Lipschitz data.
struct Observable {
    std::function<double(const Field &)> eval;
    std::function<Field(const Field &)> grad; // may be empty
    std::optional<double> declared_L_Phi;
};

inline Observable coordinate_observable(std::size_t i) {
    return {[i](const Field &q) { return q[i]; },
            [i](const Field &q) {
                Field g(q.size(), 0.0);
                g[i] = 1.0;
                return g;
            },
            std::nullopt};
}

// Running means (1/n) sum_{k<=n} Phi(Q_k).
inline std::vector<double> ergodic_average(const std::vector<Field> &traj,
                                           const Observable &obs) {
    std::vector<double> means;
    means.reserve(traj.size());
    double s = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        s += obs.eval(traj[k]);
        means.push_back(s / static_cast<double>(k + 1));
    }
    return means;
}

enum class SigmaMethod { BatchMeans, AutocovSum };

struct SigmaEstimate {
    double sigma2_hat = 0.0;
    double stderr_ = 0.0;
    std::size_t batches = 0;   // batch_means only
    std::size_t max_lag = 0;   // autocov_sum only
};

// Asymptotic variance sigma^2(Phi) of the CLT, from one long trajectory.
//   batch_means: sqrt(n) batches, batch-length * variance of batch means.
//   autocov_sum: gamma_0 + 2 sum gamma_k truncated by Geyer's initial
//   positive sequence rule on even-lag pair sums.
inline SigmaEstimate clt_sigma(const std::vector<double> &series, SigmaMethod method) {
    const std::size_t n = series.size();
    if (n < 16)
        throw TrajectoryTooShort("need at least 16 samples");
    double mean = 0.0;
    for (double x : series)
        mean += x;
    mean /= static_cast<double>(n);

    SigmaEstimate out;
    if (method == SigmaMethod::BatchMeans) {
        const std::size_t b = static_cast<std::size_t>(std::floor(std::sqrt(double(n))));
        if (n < 100 * b)
            throw TrajectoryTooShort("batch means needs n >= 100 * batch count");
        const std::size_t len = n / b;
        std::vector<double> bm(b, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < len; ++j)
                bm[i] += series[i * len + j];
            bm[i] /= static_cast<double>(len);
        }
        double bmean = 0.0;
        for (double x : bm)
            bmean += x;
        bmean /= static_cast<double>(b);
        double var = 0.0;
        for (double x : bm)
            var += (x - bmean) * (x - bmean);
        var /= static_cast<double>(b - 1);
        out.sigma2_hat = static_cast<double>(len) * var;
        out.stderr_ = out.sigma2_hat * std::sqrt(2.0 / static_cast<double>(b - 1));
        out.batches = b;
        return out;
    }

    auto gamma_at = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t k = 0; k + lag < n; ++k)
            s += (series[k] - mean) * (series[k + lag] - mean);
        return s / static_cast<double>(n);
    };
    const double g0 = gamma_at(0);
    double sigma2 = -g0;
    std::size_t lag = 0;
    const std::size_t lag_cap = n / 2;
    while (lag + 1 < lag_cap) {
        const double pair = gamma_at(lag) + gamma_at(lag + 1);
        if (pair <= 0.0)
            break;
        sigma2 += 2.0 * pair;
        lag += 2;
    }
    out.sigma2_hat = std::max(sigma2, 0.0);
    out.max_lag = lag;
    // Rough error scale: treat the truncated estimator like batch means with
    // window-sized batches.
    const double eff = static_cast<double>(n) / static_cast<double>(lag + 1);
    out.stderr_ = out.sigma2_hat * std::sqrt(2.0 / std::max(1.0, eff - 1.0));
    return out;
}

// Empirical Lipschitz constant against the distance-like function:
// sup over probes of max{2 |Phi|, sqrt(eps) |DPhi|_0} / sqrt(1 + V).
// A probe-set maximum, so a lower bound on the true sup.
struct LipschitzEstimate {
    double L_Phi_hat = 0.0;
    std::size_t probes = 0;
};

inline LipschitzEstimate lipschitz_bound(const CovarianceSpectrum &spec,
                                         const Observable &obs,
                                         const LyapunovSpec &lspec, double epsilon,
                                         const std::vector<Field> &probe_points) {
    if (!obs.grad)
        throw MissingGradient("lipschitz_bound needs an observable gradient");
    LipschitzEstimate out;
    out.probes = probe_points.size();
    for (const Field &q : probe_points) {
        const double v = v_eval(spec, lspec, q);
        const double num = std::max(2.0 * std::abs(obs.eval(q)),
                                    std::sqrt(epsilon) *
                                        gamma_norm(spec, 0.0, obs.grad(q)));
        out.L_Phi_hat = std::max(out.L_Phi_hat, num / std::sqrt(1.0 + v));
    }
    return out;
}

// |P^n Phi(q) - int Phi dmu| <= L_Phi C1 e^{-n C2} * mu_moment, where
// mu_moment estimates int sqrt(1 + V(q) + V(q')) mu(dq').
inline double observable_error_bound(double L_Phi, double C1, double C2,
                                     std::size_t n, double mu_moment) {
    return L_Phi * C1 * std::exp(-static_cast<double>(n) * C2) * mu_moment;
}

// Least-squares slope of y against x (used for log-log order fits and the
// Harris decay-rate fit). Returns {slope, stderr of slope}.
struct SlopeFit {
    double slope = 0.0;
    double stderr_ = 0.0;
    double intercept = 0.0;
};

inline SlopeFit fit_slope(const std::vector<double> &x, const std::vector<double> &y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    SlopeFit out;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (out.intercept + out.slope * x[i]);
        ss += r * r;
    }
    if (n > 2)
        out.stderr_ = std::sqrt(ss / static_cast<double>(n - 2) / sxx);
    return out;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov distance of a sample against the standard normal, and
// the asymptotic test at level alpha: reject when D > c(alpha)/sqrt(n),
// c(alpha) = sqrt(-log(alpha/2)/2).
struct KsResult {
    double statistic = 0.0;
    double critical = 0.0;
    bool pass = false;
};

inline KsResult ks_test_standard_normal(std::vector<double> sample, double alpha) {
    if (sample.empty())
        throw EmptySample("ks test needs samples");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = normal_cdf(sample[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    }
    KsResult out;
    out.statistic = d;
    out.critical = std::sqrt(-std::log(alpha / 2.0) / 2.0) / std::sqrt(n);
    out.pass = d <= out.critical;
    return out;
}

} // namespace hhmc

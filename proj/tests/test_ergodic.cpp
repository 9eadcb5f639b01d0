#include "hhmc/ergodic.hpp"

#include "hhmc/coupling.hpp"
#include "hhmc/kernel.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace hhmc;
using Catch::Approx;

namespace {

// AR(1) oracle chain: x <- a x + s xi, xi ~ N(0,1). This is the U = 0 kernel
// in one coordinate with a = cos T and s = sin T sqrt(lambda).
std::vector<double> ar1_series(double a, double s, std::size_t n, Rng &rng,
                               double x0) {
    std::vector<double> x(n);
    double cur = x0;
    for (std::size_t k = 0; k < n; ++k) {
        cur = a * cur + s * rng.gaussian();
        x[k] = cur;
    }
    return x;
}

} // namespace

TEST_CASE("ergodic_average") {
    SECTION("constant observable") {
        std::vector<Field> traj(10, Field{1.0});
        Observable obs{[](const Field &) { return 3.5; }, nullptr, std::nullopt};
        for (double m : ergodic_average(traj, obs))
            REQUIRE(m == Approx(3.5));
    }
    SECTION("free kernel running mean tends to zero") {
        const double a = std::cos(1.0), s = std::sin(1.0);
        const double sigma2 = (1.0 + a) / (1.0 - a);
        Rng rng(11, "ergodic", 0);
        const std::size_t n = 100000;
        auto x = ar1_series(a, s, n, rng, rng.gaussian());
        double mean = 0.0;
        for (double v : x)
            mean += v;
        mean /= n;
        REQUIRE(std::abs(mean) <= 4.0 * std::sqrt(sigma2 / n));
    }
    SECTION("quadratic model second moment") {
        auto spec = make_spectrum({0.5}, 0.0);
        QuadraticPotential pot(spec, 2.0);
        Rng rng(12, "ergodic", 1);
        FlowConfig cfg;
        cfg.tol = 1e-8;
        auto traj = run_chain(spec, pot, {0.5}, 100000, 0.5, cfg, rng);
        Observable obs{[](const Field &q) { return q[0] * q[0]; }, nullptr,
                       std::nullopt};
        auto means = ergodic_average(traj, obs);
        const double target = 0.25;
        // AR(1) oracle for the squares: autocorr c^2 with c = cos(w T)
        const double c = std::cos(std::sqrt(2.0) * 0.5);
        const double var_sq = 2.0 * target * target;
        const double iat = (1.0 + c * c) / (1.0 - c * c);
        const double se = std::sqrt(var_sq * iat / double(traj.size()));
        REQUIRE(std::abs(means.back() - target) <= 3.0 * se);
    }
}

TEST_CASE("clt_sigma") {
    SECTION("iid standard normals give sigma2 = 1") {
        Rng rng(21, "ergodic", 2);
        std::vector<double> x(100000);
        for (double &v : x)
            v = rng.gaussian();
        for (auto method : {SigmaMethod::BatchMeans, SigmaMethod::AutocovSum}) {
            SigmaEstimate est = clt_sigma(x, method);
            REQUIRE(est.sigma2_hat == Approx(1.0).epsilon(0.10));
        }
    }
    SECTION("AR(1) with a = cos 1") {
        const double a = std::cos(1.0), s = std::sin(1.0);
        const double sigma2 = (1.0 + a) / (1.0 - a);
        REQUIRE(sigma2 == Approx(3.35069).margin(1e-4));
        Rng rng(22, "ergodic", 3);
        auto x = ar1_series(a, s, 1000000, rng, rng.gaussian());
        SigmaEstimate bm = clt_sigma(x, SigmaMethod::BatchMeans);
        SigmaEstimate ac = clt_sigma(x, SigmaMethod::AutocovSum);
        REQUIRE(bm.sigma2_hat == Approx(sigma2).epsilon(0.10));
        REQUIRE(ac.sigma2_hat == Approx(sigma2).epsilon(0.10));
        // the two estimators agree within 20%
        REQUIRE(std::abs(bm.sigma2_hat - ac.sigma2_hat) <= 0.2 * sigma2);
    }
    SECTION("quadratic model sigma2 = s^2 (1+c)/(1-c)") {
        auto spec = make_spectrum({0.5}, 0.0);
        QuadraticPotential pot(spec, 2.0);
        const double w = std::sqrt(2.0), T = 0.5;
        const double c = std::cos(w * T);
        const double svar = 0.5 / (w * w);
        const double sigma2 = svar * (1.0 + c) / (1.0 - c);
        Rng rng(23, "ergodic", 4);
        FlowConfig cfg;
        cfg.tol = 1e-8;
        auto traj = run_chain(spec, pot, {0.0}, 400000, T, cfg, rng);
        std::vector<double> x(traj.size());
        for (std::size_t k = 0; k < traj.size(); ++k)
            x[k] = traj[k][0];
        SigmaEstimate est = clt_sigma(x, SigmaMethod::AutocovSum);
        REQUIRE(est.sigma2_hat == Approx(sigma2).epsilon(0.10));
    }
    SECTION("trajectory too short") {
        std::vector<double> x(200, 0.0);
        REQUIRE_THROWS_AS(clt_sigma(x, SigmaMethod::BatchMeans), TrajectoryTooShort);
    }
}

TEST_CASE("lipschitz_bound") {
    auto spec = make_spectrum({1.0}, 0.0);
    LyapunovSpec lspec{LyapunovKind::Poly, 2, 0.0};
    std::vector<Field> probes;
    probes.push_back({0.0});
    for (int k = 1; k <= 40; ++k)
        probes.push_back({-4.0 + 0.2 * k});

    SECTION("constant observable attains 2|c| at the V minimizer") {
        Observable obs{[](const Field &) { return -1.5; },
                       [](const Field &q) { return Field(q.size(), 0.0); },
                       std::nullopt};
        LipschitzEstimate est = lipschitz_bound(spec, obs, lspec, 0.25, probes);
        REQUIRE(est.L_Phi_hat == Approx(3.0).epsilon(1e-12));
    }
    SECTION("coordinate observable has a finite sup") {
        LyapunovSpec expspec{LyapunovKind::Exp, 0, 0.2};
        Observable obs = coordinate_observable(0);
        LipschitzEstimate est = lipschitz_bound(spec, obs, expspec, 0.25, probes);
        REQUIRE(std::isfinite(est.L_Phi_hat));
        REQUIRE(est.L_Phi_hat > 0.0);
    }
    SECTION("doubling the observable doubles the bound") {
        Observable obs = coordinate_observable(0);
        Observable obs2{[&obs](const Field &q) { return 2.0 * obs.eval(q); },
                        [&obs](const Field &q) { return scaled(2.0, obs.grad(q)); },
                        std::nullopt};
        LipschitzEstimate a = lipschitz_bound(spec, obs, lspec, 0.25, probes);
        LipschitzEstimate b = lipschitz_bound(spec, obs2, lspec, 0.25, probes);
        REQUIRE(b.L_Phi_hat == Approx(2.0 * a.L_Phi_hat).epsilon(1e-12));
    }
    SECTION("missing gradient") {
        Observable obs{[](const Field &) { return 0.0; }, nullptr, std::nullopt};
        REQUIRE_THROWS_AS(lipschitz_bound(spec, obs, lspec, 0.25, probes),
                          MissingGradient);
    }
}

TEST_CASE("observable_error_bound") {
    SECTION("monotone decay to zero") {
        double prev = observable_error_bound(1.0, 2.0, 0.1, 0, 3.0);
        for (std::size_t n = 1; n <= 50; ++n) {
            const double b = observable_error_bound(1.0, 2.0, 0.1, n, 3.0);
            REQUIRE(b < prev);
            prev = b;
        }
        REQUIRE(observable_error_bound(1.0, 2.0, 0.1, 1000, 3.0) < 1e-40);
    }
    SECTION("zero Lipschitz constant") {
        REQUIRE(observable_error_bound(0.0, 2.0, 0.1, 3, 3.0) == 0.0);
    }
    SECTION("quadratic model mean decay sits below the bound") {
        // AR(1) mean recursion: |P^n Phi(q0) - 0| = |q0| c^n with c = cos(w T)
        auto spec = make_spectrum({0.5}, 0.0);
        QuadraticPotential pot(spec, 2.0);
        const double T = 0.13;
        HarrisConstants hc [[maybe_unused]] = [&] {
            return harris_constants(spec, pot, T, {LyapunovKind::Poly, 2, 0.0});
        }();
        // theory C2 is far below the actual decay rate -log cos(w T)
        const double actual_rate = -std::log(std::cos(std::sqrt(2.0) * T));
        REQUIRE(actual_rate >= hc.C2);
    }
}

TEST_CASE("SLLN across seeds on the quadratic model") {
    auto spec = make_spectrum({0.5}, 0.0);
    QuadraticPotential pot(spec, 2.0);
    const double T = 0.5, w = std::sqrt(2.0);
    const double c = std::cos(w * T), svar = 0.5 / (w * w);
    const double sigma2 = svar * (1.0 + c) / (1.0 - c);
    const std::size_t n = 100000;
    Rng root(31, "ergodic", 5);
    for (int seed = 0; seed < 32; ++seed) {
        Rng rng = root.child("slln", seed);
        double x = std::sqrt(svar) * rng.gaussian();
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            x = c * x + std::sin(w * T) * std::sqrt(0.5) / w * rng.gaussian();
            acc += x;
        }
        REQUIRE(std::abs(acc / n) <= 5.0 * std::sqrt(sigma2 / n));
    }
}

TEST_CASE("sqrt-n normality across 200 seeds (KS at 1%)") {
    const double a = std::cos(1.0), s = std::sin(1.0);
    const double sigma2 = (1.0 + a) / (1.0 - a);
    const std::size_t n = 20000;
    Rng root(41, "ergodic", 6);
    std::vector<double> z;
    for (int seed = 0; seed < 200; ++seed) {
        Rng rng = root.child("ks", seed);
        auto x = ar1_series(a, s, n, rng, rng.gaussian());
        double mean = 0.0;
        for (double v : x)
            mean += v;
        mean /= n;
        z.push_back(std::sqrt(double(n)) * mean / std::sqrt(sigma2));
    }
    KsResult ks = ks_test_standard_normal(z, 0.01);
    REQUIRE(ks.pass);
}

TEST_CASE("running-mean band holds for most seeds on the free kernel") {
    // |mean_n| <= 4 sigma_asym / sqrt(n) for n >= 1e3 in at least 90% of seeds
    const double a = std::cos(1.0), s = std::sin(1.0);
    const double sigma2 = (1.0 + a) / (1.0 - a);
    const std::size_t n = 100000;
    Rng root(59, "ergodic", 7);
    int inside = 0;
    const int seeds = 40;
    for (int seed = 0; seed < seeds; ++seed) {
        Rng rng = root.child("band", seed);
        double x = rng.gaussian(), acc = 0.0;
        bool ok = true;
        for (std::size_t k = 1; k <= n; ++k) {
            x = a * x + s * rng.gaussian();
            acc += x;
            if (k >= 1000 && k % 250 == 0)
                ok = ok && std::abs(acc / double(k)) <=
                               4.0 * std::sqrt(sigma2 / double(k));
        }
        inside += ok ? 1 : 0;
    }
    REQUIRE(inside >= int(0.9 * seeds));
}

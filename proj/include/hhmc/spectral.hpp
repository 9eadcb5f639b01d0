#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <vector>

#include "hhmc/errors.hpp"
#include "hhmc/rng.hpp"

namespace hhmc {

// Element of the Hilbert space, stored as coefficients against the eigenbasis
// of the covariance operator.
using Field = std::vector<double>;

inline bool all_finite(const Field &f) {
    for (double x : f)
        if (!std::isfinite(x))
            return false;
    return true;
}

// Optional generator metadata for the eigenvalue sequence. When present, tail
// (trace-class) checks are done analytically on the generator instead of on
// the finite truncation.
struct PowerLawTail {
    double c = 1.0; // lambda_j = c * j^{-p}
    double p = 2.0;
};

// Spectrum of the covariance operator C on a truncation of dimension D,
// together with the regularity exponent gamma of the phase space H_gamma.
class CovarianceSpectrum {
  public:
    CovarianceSpectrum() = default;

    CovarianceSpectrum(std::vector<double> eigenvalues, double gamma,
                       std::optional<PowerLawTail> tail = std::nullopt,
                       bool require_higher_regularity = false)
        : eig_(std::move(eigenvalues)), gamma_(gamma), tail_(tail) {
        if (eig_.empty())
            throw NonPositiveEigenvalue("eigenvalue list is empty");
        for (double l : eig_)
            if (!(l > 0.0) || !std::isfinite(l))
                throw NonPositiveEigenvalue("eigenvalues must be positive and finite");
        // Exact non-increasing check, no fuzz: users pre-sort.
        for (std::size_t i = 1; i < eig_.size(); ++i)
            if (eig_[i] > eig_[i - 1])
                throw UnsortedSpectrum("eigenvalues must be non-increasing");
        if (!(gamma_ >= 0.0 && gamma_ < 0.5))
            throw GammaOutOfRange("gamma must lie in [0, 1/2)");
        if (tail_) {
            if (!(tail_->p > 1.0))
                throw NotTraceClass("declared tail lambda_j ~ j^-p needs p > 1");
            if (require_higher_regularity && !(tail_->p * (1.0 - 2.0 * gamma_) > 1.0))
                throw NotTraceClass("Tr(C^{1-2 gamma}) diverges for the declared tail");
        }
        trace_ = std::accumulate(eig_.begin(), eig_.end(), 0.0);
        trace_reg_ = 0.0;
        for (double l : eig_)
            trace_reg_ += std::pow(l, 1.0 - 2.0 * gamma_);
    }

    std::size_t dim() const { return eig_.size(); }
    double gamma() const { return gamma_; }
    double eigenvalue(std::size_t i) const { return eig_[i]; } // 0-based
    const std::vector<double> &eigenvalues() const { return eig_; }
    double lambda1() const { return eig_.front(); }
    double lambda_min() const { return eig_.back(); }
    double trace() const { return trace_; }              // Tr(C)
    double trace_regularized() const { return trace_reg_; } // Tr(C^{1-2 gamma})
    const std::optional<PowerLawTail> &tail() const { return tail_; }

    void check_dim(const Field &f) const {
        if (f.size() != eig_.size())
            throw DimensionMismatch("field length does not match spectrum dim");
    }

  private:
    std::vector<double> eig_;
    double gamma_ = 0.0;
    std::optional<PowerLawTail> tail_;
    double trace_ = 0.0;
    double trace_reg_ = 0.0;
};

inline CovarianceSpectrum
make_spectrum(std::vector<double> eigenvalues, double gamma,
              std::optional<PowerLawTail> tail = std::nullopt,
              bool require_higher_regularity = false) {
    return CovarianceSpectrum(std::move(eigenvalues), gamma, tail,
                              require_higher_regularity);
}

inline std::vector<double> power_law_eigenvalues(double c, double p, std::size_t dim) {
    std::vector<double> eig(dim);
    for (std::size_t j = 0; j < dim; ++j)
        eig[j] = c * std::pow(static_cast<double>(j + 1), -p);
    return eig;
}

// coeffs[i] <- lambda_i^exponent * coeffs[i]; C^a C^b = C^{a+b} on the
// truncation, negative exponents included.
inline Field fractional_apply(const CovarianceSpectrum &spec, double exponent,
                              const Field &f) {
    spec.check_dim(f);
    Field out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        out[i] = std::pow(spec.eigenvalue(i), exponent) * f[i];
    return out;
}

// |f|_gamma' = sqrt(sum_i lambda_i^{-2 gamma'} <f,e_i>^2)
inline double gamma_norm(const CovarianceSpectrum &spec, double gamma_exp,
                         const Field &f) {
    spec.check_dim(f);
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double w = std::pow(spec.eigenvalue(i), -2.0 * gamma_exp);
        s += w * f[i] * f[i];
    }
    return std::sqrt(s);
}

inline double gamma_inner(const CovarianceSpectrum &spec, double gamma_exp,
                          const Field &a, const Field &b) {
    spec.check_dim(a);
    spec.check_dim(b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += std::pow(spec.eigenvalue(i), -2.0 * gamma_exp) * a[i] * b[i];
    return s;
}

enum class Part { Low, High };

// Pi_N keeps modes 1..N, Pi^N the complement; low + high == f exactly.
inline Field project(const Field &f, std::size_t N, Part part) {
    if (N < 1 || N > f.size())
        throw BadN("projection index N must satisfy 1 <= N <= D");
    Field out(f.size(), 0.0);
    if (part == Part::Low)
        std::copy(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(N), out.begin());
    else
        std::copy(f.begin() + static_cast<std::ptrdiff_t>(N), f.end(),
                  out.begin() + static_cast<std::ptrdiff_t>(N));
    return out;
}

// |Pi_N f|_gamma + alpha |Pi^N f|_gamma
inline double alpha_norm(const CovarianceSpectrum &spec, double gamma_exp,
                         std::size_t N, double alpha, const Field &f) {
    spec.check_dim(f);
    if (N < 1 || N > f.size())
        throw BadN("alpha_norm needs 1 <= N <= D");
    double low = 0.0, high = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double w = std::pow(spec.eigenvalue(i), -2.0 * gamma_exp);
        (i < N ? low : high) += w * f[i] * f[i];
    }
    return std::sqrt(low) + alpha * std::sqrt(high);
}

// v ~ N(0, C): independent coordinates with variance lambda_i.
inline Field sample_gaussian(const CovarianceSpectrum &spec, Rng &rng) {
    Field v(spec.dim());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = std::sqrt(spec.eigenvalue(i)) * rng.gaussian();
    return v;
}

// Small vector helpers used throughout.
inline Field axpy(double a, const Field &x, const Field &y) {
    Field out(y);
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] += a * x[i];
    return out;
}

inline Field scaled(double a, const Field &x) {
    Field out(x);
    for (double &v : out)
        v *= a;
    return out;
}

inline Field sub(const Field &x, const Field &y) {
    Field out(x);
    for (std::size_t i = 0; i < y.size(); ++i)
        out[i] -= y[i];
    return out;
}

} // namespace hhmc

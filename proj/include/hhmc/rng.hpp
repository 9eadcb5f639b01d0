#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace hhmc {

// SplitMix64 step; used only for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t &state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic stream of draws. Streams are derived from one master seed by
// a counter-based split: seed' = mix(master, hash(component), index). Adding
// chains or components never perturbs existing streams, and a stream is fully
// identified by (master, component, index).
class Rng {
  public:
    Rng() : Rng(0, "default", 0) {}

    Rng(std::uint64_t master, std::string_view component, std::uint64_t index)
        : master_(master), component_(component), index_(index), cursor_(0) {
        std::uint64_t s = master;
        std::uint64_t b = splitmix64(s) ^ fnv1a64(component);
        b += 0x9e3779b97f4a7c15ULL * (index + 1);
        engine_.seed(splitmix64(b));
    }

    // Independent stream under the same master seed.
    Rng child(std::string_view component, std::uint64_t index) const {
        return Rng(master_, component_ + "/" + std::string(component), index);
    }

    double uniform() {
        ++cursor_;
        // 53-bit mantissa in (0,1); never returns 0 so log() is safe.
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Marsaglia polar method, spelled out so draws depend only on the engine
    // stream and not on library internals.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    std::uint64_t cursor() const { return cursor_; }
    std::uint64_t master() const { return master_; }

  private:
    std::mt19937_64 engine_;
    std::uint64_t master_;
    std::string component_;
    std::uint64_t index_;
    std::uint64_t cursor_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace hhmc

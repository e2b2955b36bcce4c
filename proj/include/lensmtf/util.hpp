#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lensmtf {

// Bad or missing input data (files, flags, malformed headers). CLI exit code 2.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric breakdown (divergence, non-finite values, singular systems). CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64 with Box-Muller on top. The std engines do not promise identical
// streams across implementations; reproducibility here is a hard contract.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) { return lo + int(next_u64() % uint64_t(hi - lo + 1)); }

    // standard normal
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double m = std::sqrt(-2.0 * std::log(u1));
        spare_ = m * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return m * std::cos(2.0 * M_PI * u2);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline double wrap_angle(double a) {
    // maps to (-pi, pi]
    a = std::fmod(a, 2.0 * M_PI);
    if (a <= -M_PI) a += 2.0 * M_PI;
    if (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

} // namespace lensmtf

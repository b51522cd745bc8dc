#pragma once

#include <cmath>
#include <cstdint>

namespace ssmri::rng {

// Counter-based generator: hash(seed, counter) is stateless, so parallel
// callers drawing disjoint counters agree with any serial evaluation order.
inline std::uint64_t hash64(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t z = seed ^ (counter * 0x9E3779B97F4A7C15ull);
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline double uniform01(std::uint64_t seed, std::uint64_t counter) {
    return static_cast<double>(hash64(seed, counter) >> 11) * 0x1.0p-53;
}

// Small stateful stream for weight init and shuffles.
class Stream {
  public:
    explicit Stream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() { return hash64(seed_, counter_++); }
    double next_uniform01() { return uniform01(seed_, counter_++); }

    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = next_uniform01();
        double u2 = next_uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace ssmri::rng

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace msgode {

// One round of the splitmix64 mixer.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seed derivation scheme used everywhere a sub-seed is needed: the master
// seed is folded with each path element in turn,
//   s <- splitmix64(s ^ splitmix64(elem)),
// so any sub-run (repeat r, system s, trajectory i, ...) is reproducible in
// isolation from (master, path).
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(master);
    for (std::uint64_t e : path) s = splitmix64(s ^ splitmix64(e));
    return s;
}

// Path tags for derive_seed. Fixed numeric values; changing them changes
// every derived stream.
namespace seed_tag {
constexpr std::uint64_t kRepeat = 1;
constexpr std::uint64_t kSystem = 2;
constexpr std::uint64_t kTrajectory = 3;
constexpr std::uint64_t kWindow = 4;
constexpr std::uint64_t kTrain = 5;
constexpr std::uint64_t kBackbone = 6;
constexpr std::uint64_t kScores = 7;
constexpr std::uint64_t kTestSet = 8;
}  // namespace seed_tag

// Deterministic RNG with explicit distributions. std:: distribution objects
// are implementation-defined, so uniform/normal are generated here from raw
// bits to keep streams stable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xA076'1D64'78BD'642FULL)) {
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
    }

    std::uint64_t next_u64() {
        // xorshift64* on a splitmix-initialized state
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // modulo bias is negligible for n << 2^64 but reject anyway
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do { x = next_u64(); } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller, with the spare value cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace msgode

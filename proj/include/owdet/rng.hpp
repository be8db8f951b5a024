#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace owdet {

// Splittable 64-bit-state PRNG (splitmix64 core). Every stochastic choice in
// the project draws from one of these; children are derived from a parent
// state plus a label, so adding a new consumer never perturbs existing
// streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Box-Muller; the second value of each pair is discarded to keep the
    // stream position independent of consumption parity.
    double gaussian(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Derives an independent child stream from this state and a label without
    // advancing this generator.
    Rng child(std::string_view label) const {
        std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
        for (const char c : label) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x100000001B3ULL;
        }
        Rng mix(state_ ^ h);
        mix.next_u64();
        return Rng(mix.next_u64());
    }

    Rng child(std::string_view label, std::uint64_t index) const {
        Rng c = child(label);
        c.state_ ^= 0x9E3779B97F4A7C15ULL * (index + 1);
        c.next_u64();
        return Rng(c.next_u64());
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace owdet

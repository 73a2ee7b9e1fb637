#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace bambino {

inline std::uint64_t splitmix64(std::uint64_t& state) {
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

// xoshiro256** with hand-rolled distributions. std:: distributions are
// implementation-defined, and checkpoints need a 4-word serializable state,
// so the generator is pinned here.
class Rng {
public:
    using State = std::array<std::uint64_t, 4>;

    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    static Rng from_state(const State& s) {
        Rng r(0);
        r.state_ = s;
        return r;
    }

    const State& state() const { return state_; }
    void set_state(const State& s) { state_ = s; }

    // Independent stream keyed by (current seed material, tag). Does not
    // advance this generator.
    Rng derive(std::uint64_t tag) const {
        std::uint64_t sm = state_[0] ^ (state_[1] * 0x9e3779b97f4a7c15ULL) ^ tag;
        return Rng(splitmix64(sm));
    }
    Rng derive(std::string_view label) const { return derive(fnv1a64(label)); }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Box-Muller, no cached spare so the state stays 4 words.
    double normal(double mu = 0.0, double sigma = 1.0) {
        const double u = 1.0 - uniform01();  // (0, 1]
        const double v = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u));
        return mu + sigma * r * std::cos(6.283185307179586 * v);
    }

    // Unbiased integer in [0, n) via rejection on masked bits.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const int bits = 64 - std::countl_zero(n - 1);
        const std::uint64_t mask = (bits >= 64) ? ~0ULL : ((1ULL << bits) - 1);
        std::uint64_t r = next_u64() & mask;
        while (r >= n) r = next_u64() & mask;
        return r;
    }

    // Index sampled from unnormalized non-negative weights.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        const double r = uniform01() * total;
        double c = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            c += weights[i];
            if (r < c) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    State state_{};
};

}  // namespace bambino

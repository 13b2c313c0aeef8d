#pragma once
// Counter-based PRNG: every random value is a pure function of
// (seed, domain tags), so cycle k can be regenerated without replaying
// cycles < k. splitmix64 is the only generator in the project.

#include <cstdint>
#include <vector>

namespace tbk {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Mix an arbitrary number of tags into one 64-bit value.
inline uint64_t mix(uint64_t seed) { return splitmix64(seed); }

template <typename... Ts>
uint64_t mix(uint64_t seed, uint64_t tag, Ts... rest) {
    return mix(splitmix64(seed ^ (tag + 0x632be59bd9b4e019ull)), rest...);
}

class Rng {
  public:
    explicit Rng(uint64_t state) : state_(state) {}

    template <typename... Ts>
    static Rng at(uint64_t seed, Ts... tags) {
        return Rng(mix(seed, uint64_t(tags)...));
    }

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        return splitmix64(state_);
    }

    // Unbiased enough for fuzz scheduling: modulo bias over 64 bits is
    // negligible at the ranges used here (< 2^32).
    uint64_t below(uint64_t n) { return n ? next() % n : 0; }

    int64_t range(int64_t lo, int64_t hi) { // inclusive
        return lo + int64_t(below(uint64_t(hi - lo + 1)));
    }

    bool chance(uint32_t num, uint32_t den) { return below(den) < num; }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[below(v.size())];
    }

    // Fisher-Yates; deterministic given the rng state.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; i--) {
            size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t state_;
};

} // namespace tbk

#pragma once

#include <cstdint>
#include <initializer_list>

namespace smre {

namespace detail {

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace detail

/**
 * @brief Counter-based random stream.
 *
 * The stream is a pure function of its key and a draw counter, so a
 * trajectory keyed by (seed, state, u-index, replicate) yields the same
 * numbers no matter which worker evaluates it.
 */
class CounterStream {
  public:
    CounterStream(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
        std::uint64_t h = detail::splitmix64_mix(seed ^ 0x6A09E667F3BCC909ULL);
        for (std::uint64_t k : key) h = detail::splitmix64_mix(h ^ detail::splitmix64_mix(k + 0x9E3779B97F4A7C15ULL));
        key_ = h;
    }

    std::uint64_t next_u64() {
        ++counter_;
        return detail::splitmix64_mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    std::uint64_t draws() const { return counter_; }

  private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace smre

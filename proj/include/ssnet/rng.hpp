#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace ssnet {

/// Counter-based generator: output i is a SplitMix64 finalizer applied to
/// key + i * golden. Sub-streams are derived by hashing a name or index into
/// the key, so streams never share state and can be created in any order.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x5353'4e45'5453'4e54ull)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix(key_ + (counter_++) * golden); }

    /// Independent stream named by a string, e.g. "data" or "noise".
    CounterRng split(std::string_view name) const;
    /// Independent stream named by an integer, e.g. a sample index.
    CounterRng split(std::uint64_t index) const;

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    std::uint64_t key() const { return key_; }

private:
    static constexpr std::uint64_t golden = 0x9e37'79b9'7f4a'7c15ull;

    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xbf58'476d'1ce4'e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d0'49bb'1331'11ebull;
        return z ^ (z >> 31);
    }

    struct KeyTag {};
    CounterRng(std::uint64_t key, KeyTag) : key_(key) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

inline CounterRng CounterRng::split(std::string_view name) const
{
    std::uint64_t h = 0xcbf2'9ce4'8422'2325ull; // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100'0000'01b3ull;
    }
    return CounterRng(mix(key_ ^ mix(h)), KeyTag{});
}

inline CounterRng CounterRng::split(std::uint64_t index) const
{
    return CounterRng(mix(key_ + mix(index + golden)), KeyTag{});
}

} // namespace ssnet

#pragma once

// Counter-based random streams (Philox4x32-10).
//
// Every draw is a pure function of (seed, stream id, draw position), so any
// number of logical streams can be derived up front and consumed in any
// order -- including concurrently -- without changing the values produced.
// Child streams are derived with fork(lane); forking the same lane twice
// yields the same child.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace rerd {

namespace detail {

inline constexpr uint32_t kPhiloxW32A = 0x9E3779B9u;
inline constexpr uint32_t kPhiloxW32B = 0xBB67AE85u;
inline constexpr uint32_t kPhiloxM4x32A = 0xD2511F53u;
inline constexpr uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

inline void philox_round(std::array<uint32_t, 4>& ctr, const std::array<uint32_t, 2>& key) {
    const uint64_t p0 = static_cast<uint64_t>(kPhiloxM4x32A) * ctr[0];
    const uint64_t p1 = static_cast<uint64_t>(kPhiloxM4x32B) * ctr[2];
    const uint32_t lo0 = static_cast<uint32_t>(p0), hi0 = static_cast<uint32_t>(p0 >> 32);
    const uint32_t lo1 = static_cast<uint32_t>(p1), hi1 = static_cast<uint32_t>(p1 >> 32);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

inline std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kPhiloxW32A;
            key[1] += kPhiloxW32B;
        }
        philox_round(ctr, key);
    }
    return ctr;
}

} // namespace detail

class RngStream {
public:
    explicit RngStream(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    uint32_t next_u32() {
        if (avail_ == 0) {
            block_ = detail::philox4x32(
                {static_cast<uint32_t>(counter_), static_cast<uint32_t>(counter_ >> 32),
                 static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)},
                {static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32)});
            ++counter_;
            avail_ = 4;
        }
        return block_[4 - avail_--];
    }

    uint64_t next_u64() {
        const uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Inverse-CDF draw from a normalized weight vector.
    std::size_t categorical(std::span<const double> weights) {
        if (weights.empty()) throw std::invalid_argument("categorical: empty weight vector");
        const double u = next_unit();
        double acc = 0.0;
        std::size_t last_positive = weights.size();
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0) last_positive = i;
            acc += weights[i];
            if (u < acc) return i;
        }
        // Rounding in the cumulative sum can leave u just above acc; fall back
        // to the last index carrying mass.
        if (last_positive == weights.size())
            throw std::invalid_argument("categorical: all weights zero");
        return last_positive;
    }

    /// Derive an independent child stream. Deterministic in (seed, stream, lane).
    RngStream fork(uint64_t lane) const {
        const auto block = detail::philox4x32(
            {static_cast<uint32_t>(lane), static_cast<uint32_t>(lane >> 32),
             static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)},
            {static_cast<uint32_t>(seed_) ^ 0x243F6A88u,
             static_cast<uint32_t>(seed_ >> 32) ^ 0x85A308D3u});
        return RngStream(seed_, (static_cast<uint64_t>(block[0]) << 32) | block[1]);
    }

private:
    uint64_t seed_;
    uint64_t stream_;
    uint64_t counter_ = 0;
    std::array<uint32_t, 4> block_{};
    int avail_ = 0;
};

} // namespace rerd

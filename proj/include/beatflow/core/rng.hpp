#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace beatflow {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Deterministic random stream.
///
/// Draws are produced from `std::mt19937_64` (whose output sequence is fixed
/// by the standard) and converted to floating point by hand, so a seed gives
/// the same values on every platform and standard library. `fork(key)`
/// derives a child stream from the seed alone: forks are independent of how
/// many draws the parent has made, which keeps parallel consumers reproducible.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0);

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t position() const noexcept { return position_; }

    [[nodiscard]] RngStream fork(std::string_view key) const;
    [[nodiscard]] RngStream fork(std::uint64_t index) const;

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    /// Standard normal via Box-Muller; the second deviate is cached.
    double normal();

private:
    std::uint64_t seed_;
    std::uint64_t position_ = 0;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace beatflow

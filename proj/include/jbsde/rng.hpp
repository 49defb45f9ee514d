#ifndef JBSDE_RNG_HPP
#define JBSDE_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>

namespace jbsde {

// Philox4x32-10 counter-based generator (Salmon et al., SC 2011).
//
// Each (seed, stream) pair yields an independent sequence; we key the cipher
// with the seed and reserve the upper counter words for the stream id, so a
// per-path generator is simply Philox4x32{seed, path_index}. Draws depend only
// on (seed, stream, draw index), which is what makes simulations reproducible
// under any parallel schedule.
class Philox4x32 {
  public:
    Philox4x32(std::uint64_t seed, std::uint64_t stream) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          ctr_{0u, 0u, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)} {}

    std::uint32_t next_u32() noexcept {
        if (have_ == 0) {
            block_ = round10(ctr_, key_);
            bump_counter();
            have_ = 4;
        }
        return block_[4 - have_--];
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t lo = next_u32();
        const std::uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform on the open interval (0,1); safe to pass through log().
    double next_uniform() noexcept {
        const std::uint64_t bits = next_u64() >> 11;  // 53 bits
        return (static_cast<double>(bits) + 0.5) * 0x1p-53;
    }

    // Standard normal via Box-Muller; the paired draw is cached.
    double next_normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double next_exponential(double rate) noexcept {
        return -std::log(next_uniform()) / rate;
    }

    // One Philox block for arbitrary counter/key, exposed for known-answer tests.
    static std::array<std::uint32_t, 4> round10(std::array<std::uint32_t, 4> ctr,
                                                std::array<std::uint32_t, 2> key) noexcept {
        for (int r = 0; r < 10; ++r) {
            ctr = single_round(ctr, key);
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
        }
        return ctr;
    }

  private:
    static std::array<std::uint32_t, 4> single_round(const std::array<std::uint32_t, 4>& c,
                                                     const std::array<std::uint32_t, 2>& k) noexcept {
        const std::uint64_t p0 = 0xD2511F53ull * c[0];
        const std::uint64_t p1 = 0xCD9E8D57ull * c[2];
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }

    void bump_counter() noexcept {
        if (++ctr_[0] == 0) ++ctr_[1];  // stream words ctr_[2], ctr_[3] stay fixed
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> ctr_;
    std::array<std::uint32_t, 4> block_{};
    int have_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace jbsde

#endif  // JBSDE_RNG_HPP

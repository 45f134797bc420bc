#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace vulnaudit {

/// Seeded random source with platform-independent output.
///
/// std::mt19937_64 has a fully specified output sequence, but the standard
/// distributions do not, so every derived draw (uniform doubles, bounded
/// integers, normals, shuffles) is implemented here on top of the raw engine.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (no cached second value).
    double normal();

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) { shuffle(std::span<T>(items)); }

private:
    std::mt19937_64 engine_;
};

/// Mixes a base seed with stream identifiers so that independent consumers
/// (epochs, timesteps, tiles) get decorrelated, reproducible seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace vulnaudit

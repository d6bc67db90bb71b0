#pragma once

#include <cmath>
#include <cstdint>

namespace tailor {

// Counter-based random number generator: every draw is a pure function of
// (seed, stream, counter), so independent streams can be consumed out of
// order or in parallel without shared state. Mixing is splitmix64 applied
// to the concatenated key.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    // Uniform in [0, 1).
    double uniform(std::uint64_t stream, std::uint64_t counter) const {
        const std::uint64_t bits = mix(seed_ ^ golden(stream), counter);
        return static_cast<double>(bits >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller on two decorrelated uniforms.
    double normal(std::uint64_t stream, std::uint64_t counter) const {
        const std::uint64_t key = seed_ ^ golden(stream);
        const std::uint64_t a = mix(key, 2 * counter);
        const std::uint64_t b = mix(key, 2 * counter + 1);
        // u1 in (0, 1] so the log below is finite.
        const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t stream, std::uint64_t counter, std::uint64_t n) const {
        return mix(seed_ ^ golden(stream), counter) % n;
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t golden(std::uint64_t stream) {
        return (stream + 1) * 0x9e3779b97f4a7c15ULL;
    }

    static std::uint64_t mix(std::uint64_t key, std::uint64_t counter) {
        std::uint64_t z = key + counter * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
};

// Stream identifiers used across the project. Keeping them in one table
// guarantees that no two consumers collide on the same (stream, counter)
// pairs for one seed.
namespace rng_stream {
inline constexpr std::uint64_t kGeneratorWeights = 1;
inline constexpr std::uint64_t kGeneratorHeads = 2;
inline constexpr std::uint64_t kSampleZ = 3;
inline constexpr std::uint64_t kMapperInit = 4;
inline constexpr std::uint64_t kTrainZ = 5;
inline constexpr std::uint64_t kTrainPrompt = 6;
inline constexpr std::uint64_t kTestZ = 7;
inline constexpr std::uint64_t kTestPrompt = 8;
inline constexpr std::uint64_t kMetricProjection = 9;
inline constexpr std::uint64_t kWAvgEstimate = 10;
}  // namespace rng_stream

}  // namespace tailor

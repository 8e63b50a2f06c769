#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

namespace claf {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Seed for a named sub-stream of a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);
/// Seed keyed by integers, e.g. (stream seed, step, slot, view).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Uniform double in [0, 1) built from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline std::size_t uniform_index(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }
inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

double sample_beta(Rng& rng, double a, double b);

/// All randomness of a run: one master seed expanded into named streams.
class RngStreams {
public:
    static constexpr std::string_view kData = "data";
    static constexpr std::string_view kAugment = "augment";
    static constexpr std::string_view kFeatureAug = "fa";
    static constexpr std::string_view kInit = "init";

    explicit RngStreams(std::uint64_t master_seed = 0);

    std::uint64_t master_seed() const noexcept { return master_; }
    Rng& stream(std::string_view name);
    std::uint64_t stream_seed(std::string_view name) const { return derive_seed(master_, name); }

    /// Text form of every stream's engine state, restorable with deserialize().
    std::string serialize() const;
    void deserialize(const std::string& text);

private:
    std::uint64_t master_;
    std::map<std::string, Rng, std::less<>> streams_;
};

}  // namespace claf

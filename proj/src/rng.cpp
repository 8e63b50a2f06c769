#include "claf/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace claf {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
    return splitmix64(master ^ fnv1a64(name));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
    return splitmix64(h ^ (c + 0x85157af5ULL));
}

double sample_beta(Rng& rng, double a, double b) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    if (x + y <= 0.0) return 0.5;
    return x / (x + y);
}

RngStreams::RngStreams(std::uint64_t master_seed) : master_(master_seed) {
    for (auto name : {kData, kAugment, kFeatureAug, kInit}) {
        streams_.emplace(std::string(name), Rng(derive_seed(master_, name)));
    }
}

Rng& RngStreams::stream(std::string_view name) {
    auto it = streams_.find(name);
    if (it == streams_.end()) it = streams_.emplace(std::string(name), Rng(derive_seed(master_, name))).first;
    return it->second;
}

std::string RngStreams::serialize() const {
    std::ostringstream os;
    os << master_ << '\n' << streams_.size() << '\n';
    for (const auto& [name, rng] : streams_) os << name << '\n' << rng << '\n';
    return os.str();
}

void RngStreams::deserialize(const std::string& text) {
    std::istringstream is(text);
    std::size_t n = 0;
    if (!(is >> master_ >> n)) throw std::runtime_error("RngStreams: malformed state");
    streams_.clear();
    for (std::size_t i = 0; i < n; ++i) {
        std::string name;
        Rng rng;
        if (!(is >> name >> rng)) throw std::runtime_error("RngStreams: malformed state for stream " + std::to_string(i));
        streams_.emplace(std::move(name), rng);
    }
}

}  // namespace claf

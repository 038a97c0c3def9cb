#pragma once

#include <cstdint>
#include <random>
#include <unordered_map>

namespace vreg {

/// One master seed per run, split into independent substreams keyed by
/// (node, device index). Draw order within a substream is fixed by the
/// iteration sequence, so results do not depend on the order in which
/// devices are evaluated across threads.
class RngPool {
public:
    explicit RngPool(std::uint64_t master_seed) : master_(master_seed) {}

    static std::uint64_t substream_key(int node, int device) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(node)) << 32) |
               static_cast<std::uint32_t>(device);
    }

    /// Instantiate the substream for (node, device). Call for every slow
    /// device before the run loop starts; lookups afterwards never mutate
    /// the map, so engines for distinct devices can be used in parallel.
    void register_substream(int node, int device) {
        const auto key = substream_key(node, device);
        if (streams_.count(key)) return;
        std::seed_seq seq{
            static_cast<std::uint32_t>(master_ & 0xffffffffu),
            static_cast<std::uint32_t>(master_ >> 32),
            static_cast<std::uint32_t>(node),
            static_cast<std::uint32_t>(device)};
        streams_.emplace(key, std::mt19937_64(seq));
    }

    std::mt19937_64& substream(int node, int device) {
        return streams_.at(substream_key(node, device));
    }

    std::uint64_t master_seed() const { return master_; }

private:
    std::uint64_t master_;
    std::unordered_map<std::uint64_t, std::mt19937_64> streams_;
};

/// Uniform draw in [0, 1) with 53 random bits. Avoids
/// std::uniform_real_distribution so sequences are pinned by the engine
/// alone, not the standard library implementation.
inline double uniform01(std::mt19937_64& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

}  // namespace vreg

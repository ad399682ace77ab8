#pragma once
// Deterministic substreams: every randomized stage draws from its own
// splitmix-derived seed so runs reproduce bit-for-bit per (seed, config).

#include <cstdint>

namespace omniseg {

inline uint64_t substream(uint64_t seed, uint64_t idx) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (idx + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace omniseg

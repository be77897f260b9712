#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ermpp {

// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed-splitting rule: every RNG stream in the project is derived from the
// single master seed as splitmix64(master ^ fnv1a(tag)). Changing one
// concern's tag (e.g. the sampler) cannot perturb another concern's stream.
constexpr uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr uint64_t derive_seed(uint64_t master, std::string_view tag) {
    return splitmix64(master ^ fnv1a(tag));
}

inline std::mt19937_64 make_rng(uint64_t seed) {
    return std::mt19937_64{seed};
}

}  // namespace ermpp

#pragma once

#include <cstdint>
#include <random>

namespace fera {

// splitmix64 finalizer; used to derive well-mixed seeds from structured keys.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent RNG stream keyed by (experiment seed, purpose, round, client).
// Every consumer of randomness derives its own stream so that adding or
// reordering consumers never perturbs the others.
enum class StreamPurpose : std::uint64_t {
    data_synth = 1,
    partition = 2,
    trigger = 3,
    root_sample = 4,
    model_init = 5,
    shuffle = 6,
    round_sample = 7,
};

inline std::mt19937_64 make_stream(std::uint64_t seed, StreamPurpose purpose,
                                   std::uint64_t round = 0,
                                   std::uint64_t client = 0) {
    std::uint64_t s = mix64(seed);
    s = mix64(s ^ static_cast<std::uint64_t>(purpose));
    s = mix64(s ^ round);
    s = mix64(s ^ (client + 0x51ed270b5435a9ddULL));
    return std::mt19937_64(s);
}

}  // namespace fera

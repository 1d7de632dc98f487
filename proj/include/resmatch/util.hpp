#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace resmatch {

// splitmix64 step; used both as a standalone mixer and to derive
// substream seeds that are statistically independent of each other.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic per-(seed, stream...) RNG. Mixing each tag through
// splitmix64 keeps streams for different classes/slots decorrelated even
// when the tags are small consecutive integers.
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = splitmix64(seed);
    s = splitmix64(s ^ (a + 0x0572b1f7u));
    s = splitmix64(s ^ (b + 0x2545f491u));
    s = splitmix64(s ^ (c + 0x9e3779b9u));
    return std::mt19937_64(s);
}

// FNV-1a 64-bit over a byte range.
inline uint64_t fnv1a64(const void* data, std::size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(uint64_t v);

// FNV-1a digest of a file's contents, as "fnv1a64:<hex>". Used for
// checkpoint/dataset digests in run manifests.
std::string digest_file(const std::filesystem::path& path);

// Worker pool: runs fn(i) for i in [0, count) on up to `workers` threads.
// workers <= 1 degenerates to a serial loop. Exceptions from jobs are
// captured and the first one rethrown after all workers join.
void run_parallel(int count, int workers, const std::function<void(int)>& fn);

// Worker cap: RESMATCH_WORKERS env var if set, else hardware concurrency.
int default_workers();

}  // namespace resmatch

#include "gid/common.hpp"

#include <cstdlib>
#include <string>

namespace gid {

unsigned thread_count() {
    const char* env = std::getenv("GID_THREADS");
    if (env == nullptr || *env == '\0') {
        return 1;
    }
    try {
        const long value = std::stol(env);
        return value < 1 ? 1u : static_cast<unsigned>(value);
    } catch (const std::exception&) {
        return 1;
    }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace gid

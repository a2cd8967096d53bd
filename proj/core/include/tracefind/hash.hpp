#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tracefind {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a over bytes; chainable through `basis`.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = kFnvOffset) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

}  // namespace tracefind

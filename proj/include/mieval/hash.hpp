#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mieval {

/// Lower-case hex SHA-256 of an arbitrary byte range.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// Incremental SHA-256 for multi-part inputs.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::span<const std::uint8_t> bytes);
    Sha256& update(std::string_view text);
    std::string hex_digest();

private:
    void* ctx_;
};

bool is_hex_digest(std::string_view s);

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a; used to mix string keys into RNG seeds.
constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace mieval

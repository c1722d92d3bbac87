#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace dalda {

using Digest256 = std::array<std::uint8_t, 32>;

// Incremental SHA-256. Multi-part inputs are length-prefixed so that
// ("ab","c") and ("a","bc") hash differently.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(const void* data, std::size_t len);
    Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
    Sha256& part(std::string_view s);
    Sha256& part_u64(std::uint64_t v);
    Digest256 finish();

private:
    void* ctx_;
};

std::string hex_digest(const Digest256& d);
std::string sha256_hex(std::string_view data);

// First 8 bytes of the digest, little-endian. The workhorse behind all
// per-image / per-draw seed derivation.
std::uint64_t digest_to_seed(const Digest256& d);

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view a);
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view a, std::uint64_t index,
                          std::string_view purpose);

} // namespace dalda

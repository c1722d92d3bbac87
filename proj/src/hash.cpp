#include "dalda/hash.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <stdexcept>

namespace dalda {

Sha256::Sha256() {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256: init failed");
    }
    ctx_ = ctx;
}

Sha256::~Sha256() {
    if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

Sha256& Sha256::update(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1)
        throw std::runtime_error("sha256: update failed");
    return *this;
}

Sha256& Sha256::part(std::string_view s) {
    part_u64(s.size());
    return update(s);
}

Sha256& Sha256::part_u64(std::uint64_t v) {
    std::uint8_t le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return update(le, sizeof(le));
}

Digest256 Sha256::finish() {
    Digest256 out{};
    unsigned int n = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &n) != 1 || n != out.size())
        throw std::runtime_error("sha256: final failed");
    return out;
}

std::string hex_digest(const Digest256& d) {
    static const char* hexc = "0123456789abcdef";
    std::string s(64, '0');
    for (std::size_t i = 0; i < d.size(); ++i) {
        s[2 * i] = hexc[d[i] >> 4];
        s[2 * i + 1] = hexc[d[i] & 0xf];
    }
    return s;
}

std::string sha256_hex(std::string_view data) {
    Sha256 h;
    h.update(data);
    return hex_digest(h.finish());
}

std::uint64_t digest_to_seed(const Digest256& d) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | d[i];
    return v;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view a) {
    Sha256 h;
    h.part_u64(global_seed).part(a);
    return digest_to_seed(h.finish());
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view a, std::uint64_t index,
                          std::string_view purpose) {
    Sha256 h;
    h.part_u64(global_seed).part(a).part_u64(index).part(purpose);
    return digest_to_seed(h.finish());
}

} // namespace dalda

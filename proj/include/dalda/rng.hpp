#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dalda {

// Seeded generator with platform-stable output. mt19937_64 is fully
// specified by the standard; the distributions here avoid the
// implementation-defined std:: distribution adaptors on purpose.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0,1), 53-bit resolution.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased uniform index in [0,n) via rejection.
    std::uint64_t uniform_index(std::uint64_t n);

    // Standard normal via inverse-CDF transform.
    double normal();

    // Fisher-Yates; stable across platforms for a fixed seed.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Per-image stream per the seeding contract: hash(global_seed, image_id,
// draw_index, purpose). Parallel scheduling cannot change drawn values.
Rng rng_for(std::uint64_t global_seed, std::string_view image_id, std::uint64_t draw_index,
            std::string_view purpose);

} // namespace dalda

#include "dalda/rng.hpp"

#include "dalda/hash.hpp"
#include "dalda/normal.hpp"

namespace dalda {

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    // uniform01 can return exactly 0; nudge into the open interval.
    double u = uniform01();
    if (u <= 0.0) u = 0x1.0p-53;
    return normal_quantile(u);
}

Rng rng_for(std::uint64_t global_seed, std::string_view image_id, std::uint64_t draw_index,
            std::string_view purpose) {
    return Rng(derive_seed(global_seed, image_id, draw_index, purpose));
}

} // namespace dalda

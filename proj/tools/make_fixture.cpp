// Regenerates the bundled two-class fixture (fixtures/pets2 by default).
// Deterministic: rerunning produces byte-identical files.
#include "dalda/hash.hpp"
#include "dalda/image.hpp"
#include "dalda/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;
using dalda::Image;

namespace {

std::uint8_t clamp8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

Image textured(int size, int r, int g, int b, bool stripes, std::uint64_t seed) {
    dalda::Rng rng(seed);
    Image img = Image::filled(size, size, 0, 0, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            int shade = stripes && (y % 8 < 3) ? -45 : 0;
            int noise = static_cast<int>(rng.uniform(-20.0, 20.0));
            img.at(y, x, 0) = clamp8(r + shade + noise);
            img.at(y, x, 1) = clamp8(g + shade + noise);
            img.at(y, x, 2) = clamp8(b + shade + noise);
        }
    }
    return img;
}

void write_class(const fs::path& root, const std::string& cls, int r, int g, int b,
                 bool stripes) {
    fs::create_directories(root / cls / "train");
    fs::create_directories(root / cls / "test");
    for (int i = 0; i < 5; ++i) {
        std::string split = i < 3 ? "train" : "test";
        fs::path path = root / cls / split / (cls + "_" + std::to_string(i) + ".ppm");
        Image img = textured(32, r, g, b, stripes, dalda::derive_seed(0, cls, i, "fixture"));
        dalda::write_ppm_file(path.string(), img);
    }
}

} // namespace

int main(int argc, char** argv) {
    fs::path root = argc > 1 ? argv[1] : "fixtures/pets2";
    fs::create_directories(root);
    std::ofstream desc(root / "description.txt", std::ios::trunc);
    desc << "Photos of common pets for a two-class recognition task; each image shows a "
            "single animal.\n";
    desc.close();
    write_class(root, "beagle", 150, 100, 60, false);
    write_class(root, "tabby", 120, 120, 125, true);
    std::printf("fixture written to %s\n", root.string().c_str());
    return 0;
}

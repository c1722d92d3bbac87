#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dalda {

// Interleaved 8-bit RGB raster. The toolkit's image currency; fixtures and
// synthetic outputs are stored as binary PPM (P6, maxval 255).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // size = width * height * 3

    bool valid() const {
        return width >= 1 && height >= 1 &&
               pixels.size() == static_cast<std::size_t>(width) * height * 3;
    }

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    static Image filled(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);

    // Raw byte view of the pixel buffer, used for hashing.
    std::string bytes() const { return std::string(pixels.begin(), pixels.end()); }
};

Image decode_ppm(const std::string& data);
std::string encode_ppm(const Image& img);

Image read_ppm_file(const std::string& path);
void write_ppm_file(const std::string& path, const Image& img);

} // namespace dalda

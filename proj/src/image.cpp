#include "dalda/image.hpp"

#include "dalda/errors.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace dalda {

namespace {

// Reads the next whitespace-delimited PPM header token, skipping '#' comments.
bool next_token(const std::string& data, std::size_t& pos, std::string& tok) {
    while (pos < data.size()) {
        char c = data[pos];
        if (c == '#') {
            while (pos < data.size() && data[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    tok = data.substr(start, pos - start);
    return !tok.empty();
}

} // namespace

Image Image::filled(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
        img.pixels[i] = r;
        img.pixels[i + 1] = g;
        img.pixels[i + 2] = b;
    }
    return img;
}

Image decode_ppm(const std::string& data) {
    std::size_t pos = 0;
    std::string tok;
    if (!next_token(data, pos, tok) || tok != "P6")
        throw Error("ppm: not a P6 image");
    if (!next_token(data, pos, tok)) throw Error("ppm: missing width");
    int w = std::stoi(tok);
    if (!next_token(data, pos, tok)) throw Error("ppm: missing height");
    int h = std::stoi(tok);
    if (!next_token(data, pos, tok)) throw Error("ppm: missing maxval");
    int maxval = std::stoi(tok);
    if (w < 1 || h < 1) throw Error("ppm: non-positive dimensions");
    if (maxval != 255) throw Error("ppm: unsupported maxval " + tok);
    ++pos; // single whitespace after maxval
    std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (data.size() < pos + need) throw Error("ppm: truncated pixel data");
    Image img;
    img.width = w;
    img.height = h;
    img.pixels.assign(data.begin() + static_cast<long>(pos), data.begin() + static_cast<long>(pos + need));
    return img;
}

std::string encode_ppm(const Image& img) {
    if (!img.valid()) throw Error("ppm: invalid image");
    std::ostringstream out;
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    return out.str();
}

Image read_ppm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("ppm: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_ppm(buf.str());
}

void write_ppm_file(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("ppm: cannot write " + path);
    std::string data = encode_ppm(img);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("ppm: short write to " + path);
}

} // namespace dalda

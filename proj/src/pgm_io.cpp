#include "lensmtf/pgm_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace lensmtf::geometry {

namespace {

// next whitespace-delimited token, skipping '#' comment lines
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            tok.push_back(char(c));
            while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#')
                tok.push_back(char(in.get()));
            return tok;
        }
    }
    throw InputError("pgm: unexpected end of header");
}

} // namespace

GrayImage read_pgm16(const std::string& path, double pixel_pitch_um) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("pgm: cannot open " + path);
    if (next_token(in) != "P5") throw InputError("pgm: not a binary PGM (P5): " + path);
    int width, height;
    long maxval;
    try {
        width = std::stoi(next_token(in));
        height = std::stoi(next_token(in));
        maxval = std::stol(next_token(in));
    } catch (const std::exception&) {
        throw InputError("pgm: malformed header in " + path);
    }
    if (width <= 0 || height <= 0) throw InputError("pgm: bad dimensions in " + path);
    if (maxval != 65535) throw InputError("pgm: expected 16-bit maxval 65535 in " + path);
    in.get();  // single whitespace byte before the raster

    std::vector<uint8_t> raw(size_t(width) * height * 2);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (size_t(in.gcount()) != raw.size()) throw InputError("pgm: truncated raster in " + path);

    GrayImage img(width, height, 0.0, pixel_pitch_um);
    for (size_t i = 0; i < img.data.size(); i++) {
        uint16_t v = uint16_t(raw[2 * i]) << 8 | raw[2 * i + 1];
        img.data[i] = v / 65535.0;
    }
    return img;
}

void write_pgm16(const GrayImage& image, const std::string& path) {
    if (image.width <= 0 || image.height <= 0)
        throw std::invalid_argument("pgm: empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("pgm: cannot write " + path);
    out << "P5\n" << image.width << " " << image.height << "\n65535\n";
    std::vector<uint8_t> raw(image.data.size() * 2);
    for (size_t i = 0; i < image.data.size(); i++) {
        double clipped = std::min(1.0, std::max(0.0, image.data[i]));
        uint16_t v = uint16_t(std::lround(clipped * 65535.0));
        raw[2 * i] = uint8_t(v >> 8);
        raw[2 * i + 1] = uint8_t(v & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!out) throw InputError("pgm: write failed for " + path);
}

} // namespace lensmtf::geometry

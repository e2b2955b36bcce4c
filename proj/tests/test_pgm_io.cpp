#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "lensmtf/pgm_io.hpp"
#include "lensmtf/util.hpp"

using namespace lensmtf;
using geometry::GrayImage;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    fs::path dir = fs::temp_directory_path() / "lensmtf_pgm_test";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("16-bit values survive a write/read round trip exactly") {
    GrayImage img(7, 5, 0.0, 4.14);
    Rng rng(2);
    for (double& v : img.data) v = double(uint16_t(rng.next_u64() % 65536)) / 65535.0;
    fs::path p = temp_file("roundtrip.pgm");
    geometry::write_pgm16(img, p.string());
    GrayImage back = geometry::read_pgm16(p.string(), 4.14);
    CHECK(back.width == 7);
    CHECK(back.height == 5);
    CHECK(back.pixel_pitch == 4.14);
    CHECK(back.data == img.data);
}

TEST_CASE("samples are stored big-endian after the P5 header") {
    GrayImage img(2, 1);
    img.at(0, 0) = 1.0;              // 0xFFFF
    img.at(1, 0) = 258.0 / 65535.0;  // 0x0102
    fs::path p = temp_file("endian.pgm");
    geometry::write_pgm16(img, p.string());

    std::ifstream in(p, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t n = all.size();
    REQUIRE(n >= 4);
    CHECK(all.rfind("P5", 0) == 0);
    CHECK(all.find("65535") != std::string::npos);
    CHECK(uint8_t(all[n - 4]) == 0xFF);
    CHECK(uint8_t(all[n - 3]) == 0xFF);
    CHECK(uint8_t(all[n - 2]) == 0x01);
    CHECK(uint8_t(all[n - 1]) == 0x02);
}

TEST_CASE("a saturated sample reads back as exactly 1.0") {
    GrayImage img(3, 3, 0.25);
    img.at(1, 1) = 1.0;
    fs::path p = temp_file("sat.pgm");
    geometry::write_pgm16(img, p.string());
    GrayImage back = geometry::read_pgm16(p.string());
    CHECK(back.at(1, 1) == 1.0);
    CHECK(back.at(0, 0) < 1.0);
}

TEST_CASE("reader rejects missing files and foreign formats") {
    CHECK_THROWS_AS(geometry::read_pgm16("/nonexistent/nope.pgm"), InputError);

    fs::path p = temp_file("ascii.pgm");
    std::ofstream(p) << "P2\n2 2\n65535\n0 0 0 0\n";
    CHECK_THROWS_AS(geometry::read_pgm16(p.string()), InputError);

    fs::path q = temp_file("eightbit.pgm");
    std::ofstream(q) << "P5\n2 2\n255\n\0\0\0\0";
    CHECK_THROWS_AS(geometry::read_pgm16(q.string()), InputError);

    fs::path t = temp_file("truncated.pgm");
    std::ofstream(t) << "P5\n4 4\n65535\nab";
    CHECK_THROWS_AS(geometry::read_pgm16(t.string()), InputError);
}

TEST_CASE("comment lines in the header are tolerated") {
    fs::path p = temp_file("comment.pgm");
    {
        std::ofstream out(p, std::ios::binary);
        out << "P5\n# shot with the panel rig\n2 1\n65535\n";
        unsigned char px[4] = {0x80, 0x00, 0x40, 0x00};
        out.write(reinterpret_cast<char*>(px), 4);
    }
    GrayImage img = geometry::read_pgm16(p.string());
    CHECK(img.width == 2);
    CHECK(img.at(0, 0) == doctest::Approx(0x8000 / 65535.0).epsilon(1e-12));
    CHECK(img.at(1, 0) == doctest::Approx(0x4000 / 65535.0).epsilon(1e-12));
}

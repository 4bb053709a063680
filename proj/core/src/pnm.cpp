#include "segdetail/pnm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace segdetail {
namespace {

struct PnmReader {
    std::string path;
    std::ifstream in;

    explicit PnmReader(const std::string& p) : path(p), in(p, std::ios::binary) {
        if (!in) throw ParseError(path + ": cannot open");
    }

    [[noreturn]] void fail(const std::string& what) {
        throw ParseError(path + ": " + what + " at byte offset " +
                         std::to_string(static_cast<long long>(in.tellg())));
    }

    // Skips whitespace and '#' comments between header tokens.
    int next_int() {
        int c = in.get();
        while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
            if (c == '#')
                while (c != '\n' && c != EOF) c = in.get();
            c = in.get();
        }
        if (c < '0' || c > '9') fail("expected integer in header");
        long value = 0;
        while (c >= '0' && c <= '9') {
            value = value * 10 + (c - '0');
            if (value > 1 << 24) fail("header value out of range");
            c = in.get();
        }
        if (c != EOF) in.unget();
        return static_cast<int>(value);
    }

    void expect_magic(const char* magic) {
        char m[2] = {0, 0};
        in.read(m, 2);
        if (m[0] != magic[0] || m[1] != magic[1])
            fail(std::string("expected magic '") + magic + "'");
    }

    std::vector<std::uint8_t> read_raster(std::size_t count) {
        int ws = in.get();
        if (ws != ' ' && ws != '\t' && ws != '\r' && ws != '\n')
            fail("expected single whitespace before raster");
        std::vector<std::uint8_t> data(count);
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count));
        if (static_cast<std::size_t>(in.gcount()) != count) fail("truncated raster");
        return data;
    }
};

std::uint8_t quantize(float v) {
    const float clipped = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return static_cast<std::uint8_t>(std::lround(clipped * 255.f));
}

}  // namespace

void write_ppm(const std::string& path, const Tensor4<float>& image, int sample) {
    if (image.c != 3) throw ArgumentError("write_ppm: image must have 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_ppm: cannot open " + path);
    out << "P6\n" << image.w << " " << image.h << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.w) * 3);
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + c] = quantize(image.at(sample, c, y, x));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
}

Tensor4<float> read_ppm(const std::string& path) {
    PnmReader r(path);
    r.expect_magic("P6");
    const int w = r.next_int();
    const int h = r.next_int();
    const int maxval = r.next_int();
    if (maxval != 255) r.fail("maxval must be 255");
    const auto raster = r.read_raster(static_cast<std::size_t>(w) * h * 3);
    Tensor4<float> image(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                image.at(0, c, y, x) =
                    static_cast<float>(raster[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.f;
    return image;
}

void write_pgm(const std::string& path, const LabelMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_pgm: cannot open " + path);
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.v.data()),
              static_cast<std::streamsize>(mask.v.size()));
}

LabelMask read_pgm(const std::string& path) {
    PnmReader r(path);
    r.expect_magic("P5");
    const int w = r.next_int();
    const int h = r.next_int();
    const int maxval = r.next_int();
    if (maxval != 255) r.fail("maxval must be 255");
    LabelMask mask(h, w);
    mask.v = r.read_raster(static_cast<std::size_t>(w) * h);
    return mask;
}

}  // namespace segdetail

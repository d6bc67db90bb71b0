#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tailor/errors.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// Binary PPM (P6) / PGM (P5) image I/O, 8-bit. No dependencies, bit-exact
// golden files. Parse maps are written as P5 with raw label indices.

inline void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.shape()[0] != 3) throw ShapeMismatch("write_ppm expects [3,H,W]");
    const std::size_t h = image.shape()[1], w = image.shape()[2], P = h * w;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot open " + path + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<std::uint8_t> row(3 * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const real_t v = image.at(c * P + y * w + x);
                const long q = std::lround(std::min(std::max(v, real_t(0)), real_t(1)) * 255.0);
                row[x * 3 + c] = static_cast<std::uint8_t>(q);
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IOError("short write to " + path);
}

inline void write_pgm(const std::string& path, const std::vector<std::uint8_t>& values,
                      std::size_t h, std::size_t w) {
    if (values.size() != h * w) throw ShapeMismatch("write_pgm size mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot open " + path + " for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size()));
    if (!out) throw IOError("short write to " + path);
}

// Reads a P6 file back into a [3,H,W] tensor in [0,1].
inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open " + path);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw IOError(path + " is not an 8-bit P6 file");
    in.get();  // single whitespace after the header
    std::vector<std::uint8_t> raw(3 * w * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw IOError(path + " truncated");
    const std::size_t P = w * h;
    std::vector<real_t> d(3 * P);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                d[c * P + y * w + x] = static_cast<real_t>(raw[(y * w + x) * 3 + c]) / real_t(255);
    return Tensor::from({3, h, w}, std::move(d));
}

}  // namespace tailor

#include "vsf/ppm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "vsf/util.hpp"

namespace vsf {

std::string format_exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

namespace {

void write_pnm(const std::string& path, const char* magic, std::size_t width, std::size_t height,
               std::size_t channels, const std::vector<std::uint8_t>& data) {
    if (data.size() != width * height * channels) {
        throw std::invalid_argument("write_pnm: data size does not match " +
                                    std::to_string(width) + "x" + std::to_string(height));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pnm: cannot open " + path);
    out << magic << "\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write_pnm: write failed for " + path);
}

} // namespace

void write_ppm_p6(const std::string& path, std::size_t width, std::size_t height,
                  const std::vector<std::uint8_t>& rgb) {
    write_pnm(path, "P6", width, height, 3, rgb);
}

void write_ppm_p5(const std::string& path, std::size_t width, std::size_t height,
                  const std::vector<std::uint8_t>& gray) {
    write_pnm(path, "P5", width, height, 1, gray);
}

std::vector<std::uint8_t> image_to_rgb8(const ToyImage& img) {
    std::vector<std::uint8_t> out(kImagePixels);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, img.pixels[i]));
        out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

void write_image_ppm(const std::string& path, const ToyImage& img) {
    write_ppm_p6(path, kImageSize, kImageSize, image_to_rgb8(img));
}

} // namespace vsf

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsf/toy.hpp"

namespace vsf {

/// Binary color PPM (P6), maxval 255, rgb row-major.
void write_ppm_p6(const std::string& path, std::size_t width, std::size_t height,
                  const std::vector<std::uint8_t>& rgb);
/// Binary grayscale PPM (P5), maxval 255.
void write_ppm_p5(const std::string& path, std::size_t width, std::size_t height,
                  const std::vector<std::uint8_t>& gray);

std::vector<std::uint8_t> image_to_rgb8(const ToyImage& img);
void write_image_ppm(const std::string& path, const ToyImage& img);

} // namespace vsf

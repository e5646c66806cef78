#pragma once

// Depth and normal rasters plus their binary PNM codecs.
//
// Depth: "P5" PGM, maxval 65535, big-endian 16-bit samples, pixel value =
// camera-space distance along the optical axis in millimeters, 0 =
// background. Normals: "P6" PPM, maxval 255, unit normal n encoded as
// round(n * 127.5 + 127.5) per channel, background = (0,0,0). Both carry
// one comment line with the generator seed.

#include "depthforge/geometry.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace depthforge {

struct DepthImage {
    int width = 0;
    int height = 0;
    std::vector<uint16_t> pixels; // row-major

    uint16_t at(int x, int y) const { return pixels[size_t(y) * width + x]; }
    uint16_t& at(int x, int y) { return pixels[size_t(y) * width + x]; }
};

struct NormalMap {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels; // row-major, 3 bytes per pixel

    std::array<uint8_t, 3> at(int x, int y) const {
        const size_t i = (size_t(y) * width + x) * 3;
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }
    void set(int x, int y, std::array<uint8_t, 3> rgb) {
        const size_t i = (size_t(y) * width + x) * 3;
        pixels[i] = rgb[0];
        pixels[i + 1] = rgb[1];
        pixels[i + 2] = rgb[2];
    }
};

std::array<uint8_t, 3> encode_normal(Vec3 n);
Vec3 decode_normal(std::array<uint8_t, 3> rgb);
inline bool is_background(std::array<uint8_t, 3> rgb) {
    return rgb[0] == 0 && rgb[1] == 0 && rgb[2] == 0;
}

void write_pgm16(const DepthImage& img, const std::string& path, uint64_t seed);
DepthImage read_pgm16(const std::string& path);

void write_ppm8(const NormalMap& img, const std::string& path, uint64_t seed);
NormalMap read_ppm8(const std::string& path);

} // namespace depthforge

#include "depthforge/image.hpp"

#include "depthforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace depthforge {

std::array<uint8_t, 3> encode_normal(Vec3 n) {
    auto quantize = [](double v) {
        const long q = std::lround(v * 127.5 + 127.5);
        return uint8_t(std::clamp(q, 0l, 255l));
    };
    // The z channel is capped at 127 so a camera-facing normal (n_z <= 0)
    // never decodes to a positive z after rounding.
    return {quantize(n.x), quantize(n.y), uint8_t(std::min<long>(127, quantize(n.z)))};
}

Vec3 decode_normal(std::array<uint8_t, 3> rgb) {
    auto expand = [](uint8_t q) { return (double(q) - 127.5) / 127.5; };
    return {expand(rgb[0]), expand(rgb[1]), expand(rgb[2])};
}

namespace {

// Reads one PNM header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(char(c));
        c = in.get();
    }
    if (tok.empty()) throw FormatError("unexpected end of header in " + path);
    return tok;
}

long parse_dim(const std::string& tok, const std::string& path) {
    size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(tok, &pos);
    } catch (const std::exception&) {
        throw FormatError("non-numeric header field in " + path);
    }
    if (pos != tok.size() || v <= 0 || v > 1 << 20)
        throw FormatError("bad header dimension in " + path);
    return v;
}

void write_header(std::ostream& out, const char* magic, int w, int h, int maxval,
                  uint64_t seed) {
    out << magic << "\n# seed=" << seed << "\n" << w << " " << h << "\n"
        << maxval << "\n";
}

} // namespace

void write_pgm16(const DepthImage& img, const std::string& path, uint64_t seed) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_header(out, "P5", img.width, img.height, 65535, seed);
    std::vector<uint8_t> buf(img.pixels.size() * 2);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        buf[2 * i] = uint8_t(img.pixels[i] >> 8); // big-endian per PGM
        buf[2 * i + 1] = uint8_t(img.pixels[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    out.flush();
    if (!out) throw IoError("short write: " + path);
}

DepthImage read_pgm16(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    if (next_token(in, path) != "P5") throw FormatError("not a binary PGM: " + path);
    DepthImage img;
    img.width = int(parse_dim(next_token(in, path), path));
    img.height = int(parse_dim(next_token(in, path), path));
    const long maxval = parse_dim(next_token(in, path), path);
    if (maxval != 65535)
        throw FormatError("expected 16-bit PGM (maxval 65535): " + path);
    // next_token consumed the single whitespace byte after maxval.
    const size_t n = size_t(img.width) * img.height;
    std::vector<uint8_t> buf(n * 2);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (size_t(in.gcount()) != buf.size())
        throw FormatError("truncated PGM payload: " + path);
    if (in.peek() != EOF) throw FormatError("trailing bytes after PGM payload: " + path);
    img.pixels.resize(n);
    for (size_t i = 0; i < n; ++i)
        img.pixels[i] = uint16_t(uint16_t(buf[2 * i]) << 8 | buf[2 * i + 1]);
    return img;
}

void write_ppm8(const NormalMap& img, const std::string& path, uint64_t seed) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_header(out, "P6", img.width, img.height, 255, seed);
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              std::streamsize(img.pixels.size()));
    out.flush();
    if (!out) throw IoError("short write: " + path);
}

NormalMap read_ppm8(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    if (next_token(in, path) != "P6") throw FormatError("not a binary PPM: " + path);
    NormalMap img;
    img.width = int(parse_dim(next_token(in, path), path));
    img.height = int(parse_dim(next_token(in, path), path));
    const long maxval = parse_dim(next_token(in, path), path);
    if (maxval != 255) throw FormatError("expected 8-bit PPM (maxval 255): " + path);
    img.pixels.resize(size_t(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            std::streamsize(img.pixels.size()));
    if (size_t(in.gcount()) != img.pixels.size())
        throw FormatError("truncated PPM payload: " + path);
    if (in.peek() != EOF) throw FormatError("trailing bytes after PPM payload: " + path);
    return img;
}

} // namespace depthforge

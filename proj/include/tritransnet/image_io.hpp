#pragma once

// Binary PPM (P6) and PGM (P5) codec, 8- and 16-bit. Errors name the file and
// the byte offset where parsing failed.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tritransnet/common.hpp"

namespace ttn {

struct Image {
    long w = 0, h = 0, channels = 0;  // 1 (PGM) or 3 (PPM)
    long maxval = 255;
    std::vector<std::uint16_t> pix;  // interleaved row-major
};

namespace pnm_detail {

struct Scanner {
    const std::string& path;
    const std::vector<char>& buf;
    size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(path + ": " + what + " at byte " + std::to_string(pos));
    }
    void skip_space() {
        while (pos < buf.size()) {
            char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                return;
            }
        }
    }
    long number(const char* what) {
        skip_space();
        if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
            fail(std::string("malformed header, expected ") + what);
        long v = 0;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            v = v * 10 + (buf[pos] - '0');
            if (v > (1L << 30)) fail(std::string(what) + " overflows");
            ++pos;
        }
        return v;
    }
};

}  // namespace pnm_detail

inline Image read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("image not found: " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    pnm_detail::Scanner sc{path, buf};
    if (buf.size() < 2 || buf[0] != 'P') sc.fail("not a PNM file (missing magic)");
    Image img;
    if (buf[1] == '5') img.channels = 1;
    else if (buf[1] == '6') img.channels = 3;
    else {
        sc.pos = 1;
        sc.fail("unsupported PNM type (expected P5 or P6)");
    }
    sc.pos = 2;
    img.w = sc.number("width");
    img.h = sc.number("height");
    img.maxval = sc.number("maxval");
    if (img.w <= 0 || img.h <= 0) sc.fail("non-positive image extent");
    if (img.w > 1 << 16 || img.h > 1 << 16) sc.fail("image extent overflow");
    if (img.maxval <= 0 || img.maxval > 65535) sc.fail("maxval out of range");
    // single whitespace byte separates header from payload
    if (sc.pos >= buf.size() ||
        !(buf[sc.pos] == '\n' || buf[sc.pos] == ' ' || buf[sc.pos] == '\t' ||
          buf[sc.pos] == '\r'))
        sc.fail("malformed header, expected whitespace before payload");
    ++sc.pos;
    long bytes_per = img.maxval > 255 ? 2 : 1;
    long count = img.w * img.h * img.channels;
    if ((long)(buf.size() - sc.pos) < count * bytes_per) {
        sc.pos = buf.size();
        throw DataError(path + ": truncated payload, need " + std::to_string(count * bytes_per) +
                        " bytes from byte " + std::to_string(buf.size()));
    }
    img.pix.resize((size_t)count);
    const unsigned char* p = (const unsigned char*)buf.data() + sc.pos;
    if (bytes_per == 1) {
        for (long i = 0; i < count; ++i) img.pix[i] = p[i];
    } else {
        for (long i = 0; i < count; ++i)
            img.pix[i] = (std::uint16_t)((p[2 * i] << 8) | p[2 * i + 1]);  // big-endian
    }
    return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("write_pnm: channels must be 1 or 3");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image: " + path);
    f << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.w << " " << img.h << "\n"
      << img.maxval << "\n";
    if (img.maxval > 255) {
        for (std::uint16_t v : img.pix) {
            f.put((char)(v >> 8));
            f.put((char)(v & 0xff));
        }
    } else {
        for (std::uint16_t v : img.pix) f.put((char)(v & 0xff));
    }
    if (!f) throw DataError("image write failed: " + path);
}

inline void write_pgm8(const std::string& path, long w, long h,
                       const std::vector<std::uint8_t>& gray) {
    Image img;
    img.w = w;
    img.h = h;
    img.channels = 1;
    img.maxval = 255;
    img.pix.assign(gray.begin(), gray.end());
    write_pnm(path, img);
}

}  // namespace ttn

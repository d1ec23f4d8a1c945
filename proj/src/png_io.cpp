#include "tinydetr/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "tinydetr/errors.hpp"

namespace tinydetr {

namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>(v & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + payload.size()));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) {
        return a;
    }
    return pb <= pc ? b : c;
}

}  // namespace

void write_png_rgb8(const std::string& path, const Image8& image) {
    if (image.width == 0 || image.height == 0 ||
        image.rgb.size() != image.width * image.height * 3) {
        throw DataError("png " + path + ": raster dimensions do not match the pixel buffer");
    }
    const std::size_t stride = image.width * 3;
    std::vector<unsigned char> raw((stride + 1) * image.height);
    for (std::size_t y = 0; y < image.height; ++y) {
        raw[y * (stride + 1)] = 0;  // filter: none
        std::memcpy(raw.data() + y * (stride + 1) + 1, image.rgb.data() + y * stride, stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  Z_BEST_SPEED) != Z_OK) {
        throw DataError("png " + path + ": deflate failed");
    }
    compressed.resize(bound);

    std::vector<unsigned char> out(kSignature, kSignature + 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(image.width));
    put_u32(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);  // deflate
    ihdr.push_back(0);  // adaptive filtering
    ihdr.push_back(0);  // no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw DataError("png " + path + ": cannot open for writing");
    }
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) {
        throw DataError("png " + path + ": write failed");
    }
}

Image8 read_png_rgb8(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("png " + path + ": cannot open");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
        throw DataError("png " + path + ": not a PNG file");
    }

    std::size_t width = 0, height = 0;
    bool have_header = false;
    std::vector<unsigned char> idat;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) {
            throw DataError("png " + path + ": truncated chunk");
        }
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const unsigned char* payload = bytes.data() + pos + 8;
        const std::uint32_t expect_crc = get_u32(payload + len);
        const auto crc = crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(4 + len));
        if (static_cast<std::uint32_t>(crc) != expect_crc) {
            throw DataError("png " + path + ": chunk CRC mismatch");
        }
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) {
                throw DataError("png " + path + ": malformed IHDR");
            }
            width = get_u32(payload);
            height = get_u32(payload + 4);
            const int bit_depth = payload[8];
            const int color_type = payload[9];
            const int interlace = payload[12];
            if (bit_depth != 8 || color_type != 2 || interlace != 0) {
                throw DataError("png " + path + ": unsupported flavor (need 8-bit "
                                "non-interlaced RGB; got depth " + std::to_string(bit_depth) +
                                ", color type " + std::to_string(color_type) + ")");
            }
            have_header = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!have_header || width == 0 || height == 0) {
        throw DataError("png " + path + ": missing image header");
    }

    const std::size_t stride = width * 3;
    std::vector<unsigned char> raw((stride + 1) * height);
    uLongf raw_size = static_cast<uLongf>(raw.size());
    const int rc = uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || raw_size != raw.size()) {
        throw DataError("png " + path + ": inflate failed");
    }

    Image8 image;
    image.width = width;
    image.height = height;
    image.rgb.assign(stride * height, 0);
    std::vector<unsigned char> prev(stride, 0);
    for (std::size_t y = 0; y < height; ++y) {
        const unsigned char filter = raw[y * (stride + 1)];
        const unsigned char* src = raw.data() + y * (stride + 1) + 1;
        unsigned char* dst = image.rgb.data() + y * stride;
        for (std::size_t x = 0; x < stride; ++x) {
            const int left = x >= 3 ? dst[x - 3] : 0;
            const int up = prev[x];
            const int up_left = x >= 3 ? prev[x - 3] : 0;
            int value = src[x];
            switch (filter) {
                case 0: break;
                case 1: value += left; break;
                case 2: value += up; break;
                case 3: value += (left + up) / 2; break;
                case 4: value += paeth(left, up, up_left); break;
                default:
                    throw DataError("png " + path + ": unknown filter type " +
                                    std::to_string(filter));
            }
            dst[x] = static_cast<unsigned char>(value & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return image;
}

Tensor image_to_tensor(const Image8& image) {
    const std::size_t h = image.height, w = image.width;
    std::vector<double> values(3 * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                values[c * h * w + y * w + x] =
                    static_cast<double>(image.rgb[(y * w + x) * 3 + c]) / 255.0;
            }
        }
    }
    return Tensor(Shape{3, h, w}, std::move(values));
}

Image8 tensor_to_image(const Tensor& image) {
    if (image.ndim() != 3 || image.shape()[0] != 3) {
        throw std::invalid_argument("tensor_to_image: expected [3,H,W]; got " +
                                    shape_to_string(image.shape()));
    }
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    Image8 out;
    out.width = w;
    out.height = h;
    out.rgb.assign(w * h * 3, 0);
    const auto data = image.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(data[c * h * w + y * w + x], 0.0, 1.0);
                out.rgb[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    return out;
}

}  // namespace tinydetr

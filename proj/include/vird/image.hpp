#pragma once

// 8-bit raster images plus a minimal PNG codec (8-bit gray/RGB/RGBA,
// non-interlaced) built straight on zlib. Written files use filter 0 rows and
// a fixed compression level so byte output is deterministic; the reader
// handles all five scanline filters. tEXt chunks carry small metadata such as
// heatmap ranges.

#include <cstring>
#include <fstream>
#include <map>

#include <zlib.h>

#include "vird/common.hpp"

namespace vird {

/// Row-major interleaved (HWC) 8-bit image.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1, 3 or 4
  std::vector<std::uint8_t> pixels;

  static Image create(int w, int h, int c, std::uint8_t fill = 0) {
    Image im;
    im.width = w;
    im.height = h;
    im.channels = c;
    im.pixels.assign(static_cast<size_t>(w) * h * c, fill);
    return im;
  }

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  void set_rgb(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    at(x, y, 0) = r;
    at(x, y, 1) = g;
    at(x, y, 2) = b;
  }
};

/// (C,H,W) double tensor in [0,1] from an 8-bit image.
inline Tensor image_to_chw(const Image& im) {
  Tensor t = Tensor::zeros({im.channels, im.height, im.width});
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) t.at(c, y, x) = im.at(x, y, c) / 255.0;
  return t;
}

inline Image chw_to_image(const Tensor& t) {
  if (t.ndim() != 3) throw std::invalid_argument("chw_to_image: expects (C,H,W)");
  Image im = Image::create(t.shape[2], t.shape[1], t.shape[0]);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        double v = std::clamp(t.at(c, y, x), 0.0, 1.0);
        im.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return im;
}

namespace detail_png {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[5],
                         const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail_png

inline void write_png(const std::string& path, const Image& im,
                      const std::map<std::string, std::string>& text = {}) {
  if (im.channels != 1 && im.channels != 3 && im.channels != 4)
    throw std::invalid_argument("write_png: unsupported channel count");
  using namespace detail_png;
  std::vector<std::uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};

  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(im.width));
  put_u32(ihdr, static_cast<std::uint32_t>(im.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(im.channels == 1 ? 0 : (im.channels == 3 ? 2 : 6));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);

  for (const auto& [key, value] : text) {
    std::vector<std::uint8_t> payload(key.begin(), key.end());
    payload.push_back(0);
    payload.insert(payload.end(), value.begin(), value.end());
    append_chunk(out, "tEXt", payload);
  }

  const size_t stride = static_cast<size_t>(im.width) * im.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * im.height);
  for (int y = 0; y < im.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), im.pixels.begin() + static_cast<long>(y * stride),
               im.pixels.begin() + static_cast<long>((y + 1) * stride));
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: compression failed for " + path);
  comp.resize(comp_len);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<long>(out.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

struct PngFile {
  Image image;
  std::map<std::string, std::string> text;
};

inline PngFile read_png(const std::string& path) {
  using namespace detail_png;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw std::runtime_error("read_png: not a PNG file: " + path);

  PngFile result;
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  size_t pos = 8;
  bool saw_end = false;
  while (pos + 8 <= buf.size()) {
    std::uint32_t len = get_u32(&buf[pos]);
    if (pos + 12 + len > buf.size()) throw std::runtime_error("read_png: truncated chunk in " + path);
    std::string type(reinterpret_cast<const char*>(&buf[pos + 4]), 4);
    const std::uint8_t* data = &buf[pos + 8];
    auto crc_expect = get_u32(&buf[pos + 8 + len]);
    auto crc_actual = crc32(0L, &buf[pos + 4], static_cast<uInt>(len + 4));
    if (crc_expect != crc_actual) throw std::runtime_error("read_png: CRC mismatch in " + path);
    if (type == "IHDR") {
      if (len != 13) throw std::runtime_error("read_png: bad IHDR in " + path);
      width = static_cast<int>(get_u32(data));
      height = static_cast<int>(get_u32(data + 4));
      int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8 || interlace != 0)
        throw std::runtime_error("read_png: only 8-bit non-interlaced supported: " + path);
      channels = color == 0 ? 1 : (color == 2 ? 3 : (color == 6 ? 4 : -1));
      if (channels < 0) throw std::runtime_error("read_png: unsupported color type in " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "tEXt") {
      const std::uint8_t* nul = static_cast<const std::uint8_t*>(std::memchr(data, 0, len));
      if (nul) {
        std::string key(reinterpret_cast<const char*>(data), static_cast<size_t>(nul - data));
        std::string value(reinterpret_cast<const char*>(nul + 1),
                          len - static_cast<size_t>(nul - data) - 1);
        result.text[key] = value;
      }
    } else if (type == "IEND") {
      saw_end = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_end || width <= 0 || height <= 0)
    throw std::runtime_error("read_png: malformed file: " + path);

  const size_t stride = static_cast<size_t>(width) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("read_png: inflate failed for " + path);

  result.image = Image::create(width, height, channels);
  const int bpp = channels;
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1)];
    std::uint8_t filter = src[0];
    std::uint8_t* dst = &result.image.pixels[static_cast<size_t>(y) * stride];
    for (size_t i = 0; i < stride; ++i) {
      int x = src[1 + i];
      int a = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
      int b = prev[i];
      int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += detail_png::paeth(a, b, c); break;
        default: throw std::runtime_error("read_png: bad filter byte in " + path);
      }
      dst[i] = static_cast<std::uint8_t>(x & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return result;
}

}  // namespace vird

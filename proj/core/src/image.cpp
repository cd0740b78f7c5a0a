#include "vidann/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vidann/error.hpp"

namespace vidann {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

Image decode_png(std::span<const std::uint8_t> bytes, const std::string& name) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError(name + ": " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(name + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (color) {
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
      out.pixels[i] = luma(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]);
    }
  } else {
    out.pixels = std::move(buffer);
  }
  return out;
}

// Netpbm header tokens may be separated by whitespace and '#' comments.
struct PnmReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  std::string name;

  void skip_space() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  int number() {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError(name + ": malformed PNM header");
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      if (value > (1 << 24)) throw IoError(name + ": PNM value out of range");
    }
    return static_cast<int>(value);
  }
};

Image decode_pnm(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw IoError(name + ": unsupported image format");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw IoError(name + ": unsupported PNM variant P" + std::string(1, kind));
  }
  PnmReader r{bytes, 2, name};
  const int width = r.number();
  const int height = r.number();
  const int maxval = r.number();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw IoError(name + ": invalid PNM dimensions");
  }
  const bool color = kind == '3' || kind == '6';
  const bool binary = kind == '5' || kind == '6';
  const int channels = color ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  std::vector<int> values(count);
  if (binary) {
    ++r.pos;  // single whitespace after maxval
    const int bps = maxval > 255 ? 2 : 1;
    if (r.pos + count * bps > bytes.size()) throw IoError(name + ": truncated PNM data");
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = bps == 1 ? bytes[r.pos + i]
                           : (bytes[r.pos + 2 * i] << 8) | bytes[r.pos + 2 * i + 1];
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) values[i] = r.number();
  }
  auto to8 = [maxval](int v) {
    return static_cast<std::uint8_t>(std::clamp((v * 255 + maxval / 2) / maxval, 0, 255));
  };
  Image out(width, height);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = color ? luma(to8(values[3 * i]), to8(values[3 * i + 1]), to8(values[3 * i + 2]))
                          : to8(values[i]);
  }
  return out;
}

}  // namespace

namespace {

// Bilinear taps along one axis, clamped to the frame.
struct Taps {
  std::vector<int> i0, i1;
  std::vector<double> f;
};

Taps make_taps(int count, double start, double step, int limit) {
  Taps t;
  t.i0.resize(count);
  t.i1.resize(count);
  t.f.resize(count);
  for (int j = 0; j < count; ++j) {
    const double s = std::clamp(start + (j + 0.5) * step - 0.5, 0.0, limit - 1.0);
    t.i0[j] = static_cast<int>(s);
    t.i1[j] = std::min(t.i0[j] + 1, limit - 1);
    t.f[j] = s - t.i0[j];
  }
  return t;
}

ImageF resample(const Image& frame, int res, double left, double top, double step_x, double step_y) {
  ImageF out(res, res);
  const Taps tx = make_taps(res, left, step_x, frame.width);
  const Taps ty = make_taps(res, top, step_y, frame.height);
  for (int i = 0; i < res; ++i) {
    const std::uint8_t* r0 = &frame.pixels[static_cast<std::size_t>(ty.i0[i]) * frame.width];
    const std::uint8_t* r1 = &frame.pixels[static_cast<std::size_t>(ty.i1[i]) * frame.width];
    const double fy = ty.f[i];
    float* dst = &out.pixels[static_cast<std::size_t>(i) * res];
    for (int j = 0; j < res; ++j) {
      const double fx = tx.f[j];
      const double upper = r0[tx.i0[j]] * (1.0 - fx) + r0[tx.i1[j]] * fx;
      const double lower = r1[tx.i0[j]] * (1.0 - fx) + r1[tx.i1[j]] * fx;
      dst[j] = static_cast<float>(upper * (1.0 - fy) + lower * fy);
    }
  }
  return out;
}

}  // namespace

ImageF crop_window(const Image& frame, const CropWindow& window) {
  const double scale = window.scale();
  return resample(frame, window.output_resolution, window.center_x - window.side / 2.0,
                  window.center_y - window.side / 2.0, scale, scale);
}

ImageF resample_full(const Image& frame, int resolution) {
  return resample(frame, resolution, 0.0, 0.0, static_cast<double>(frame.width) / resolution,
                  static_cast<double>(frame.height) / resolution);
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

Image decode_image(std::span<const std::uint8_t> bytes, const std::string& name) {
  return is_png(bytes) ? decode_png(bytes, name) : decode_pnm(bytes, name);
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return decode_image(bytes, path.string());
}

std::pair<int, int> read_image_size(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (is_png(bytes)) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
      throw IoError(path.string() + ": " + img.message);
    }
    std::pair<int, int> size{static_cast<int>(img.width), static_cast<int>(img.height)};
    png_image_free(&img);
    return size;
  }
  if (bytes.size() < 2 || bytes[0] != 'P') throw IoError(path.string() + ": unsupported image format");
  PnmReader r{bytes, 2, path.string()};
  const int w = r.number();
  const int h = r.number();
  return {w, h};
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

}  // namespace vidann

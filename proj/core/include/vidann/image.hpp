#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vidann/geometry.hpp"

namespace vidann {

/// 8-bit grayscale image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Real-valued single channel image used for resampled crops (values in 0..255).
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  ImageF() = default;
  ImageF(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Bilinear resample of a square window; samples outside the frame clamp to the border.
ImageF crop_window(const Image& frame, const CropWindow& window);

/// Whole frame stretched to resolution x resolution.
ImageF resample_full(const Image& frame, int resolution);

/// Fixed luma weights 0.299 / 0.587 / 0.114.
std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept;

/// Decodes PNG (gray, gray+alpha, RGB, RGBA, palette; 8 or 16 bit) or binary/ASCII PNM
/// (P2, P3, P5, P6) into grayscale.
Image read_image(const std::filesystem::path& path);
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");

/// Only reads dimensions where the format allows it cheaply.
std::pair<int, int> read_image_size(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);
void write_pgm(const std::filesystem::path& path, const Image& image);

}  // namespace vidann

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace epseg {

/// 8-bit image with interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(std::size_t(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c = 0) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c = 0) const { return pixels[(std::size_t(y) * width + x) * channels + c]; }
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decoded images are converted to `channels` (1 or 3).
Image read_png(const std::string& path, int channels);
Image decode_png(std::span<const std::uint8_t> bytes, int channels);
void write_png(const std::string& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Ignores whitespace; throws std::invalid_argument on any other non-alphabet byte.
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace epseg

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covidnet/tensor/tensor.hpp"

namespace covidnet::data {

/// Reads an 8-bit PNG (any colour type, converted to grayscale) or a PGM
/// (P2 or P5, maxval up to 65535) into a [H, W] tensor scaled to [0, 1].
/// The format is chosen from the file's magic bytes. Throws
/// std::runtime_error naming the path on unreadable or corrupt input.
Tensor read_image(const std::string& path);

/// Writes a [H, W] tensor with values in [0, 1] as 8-bit grayscale.
/// Values are clamped and rounded to the nearest level.
void write_pgm(const std::string& path, const Tensor& image);
void write_png_gray(const std::string& path, const Tensor& image);

/// Interleaved 8-bit RGB image.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

void write_png_rgb(const std::string& path, const RgbImage& image);
RgbImage read_png_rgb(const std::string& path);

/// Writes `image` as PNG or PGM according to the extension of `path`.
void write_gray(const std::string& path, const Tensor& image);

std::uint8_t to_byte(double value);

/// Bilinear resampling with half-pixel centres and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Decodes, converts to grayscale and resizes to size x size.
Tensor preprocess(const std::string& path, std::size_t size);

}  // namespace covidnet::data

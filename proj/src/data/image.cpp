#include "covidnet/data/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace covidnet::data {

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open image");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void check_image(const Tensor& image, const char* what) {
  if (image.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a [H, W] image, got " +
                                shape_str(image.shape()));
  }
}

class PgmReader {
 public:
  PgmReader(const std::vector<std::uint8_t>& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  Tensor read() {
    const char kind = magic();
    const std::size_t width = number(), height = number(), maxval = number();
    if (width == 0 || height == 0) fail("zero image extent");
    if (maxval == 0 || maxval > 65535) fail("maxval must lie in [1, 65535]");
    std::vector<double> values(width * height);
    if (kind == '5') {
      ++pos_;  // single whitespace after maxval
      const std::size_t bytes_per = maxval > 255 ? 2 : 1;
      if (bytes_.size() < pos_ + values.size() * bytes_per) fail("truncated pixel data");
      for (std::size_t i = 0; i < values.size(); ++i) {
        std::size_t v = bytes_[pos_ + i * bytes_per];
        if (bytes_per == 2) v = v * 256 + bytes_[pos_ + i * 2 + 1];
        values[i] = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
      }
    } else {
      for (double& v : values) v = std::min(1.0, static_cast<double>(number()) / static_cast<double>(maxval));
    }
    return Tensor({height, width}, std::move(values));
  }

 private:
  char magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || (bytes_[1] != '5' && bytes_[1] != '2')) {
      fail("not a P2/P5 PGM file");
    }
    pos_ = 2;
    return static_cast<char>(bytes_[1]);
  }

  std::size_t number() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("malformed header or pixel value");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1u << 30) fail("number out of range");
    }
    return v;
  }

  [[noreturn]] void fail(const std::string& why) const { throw std::runtime_error(path_ + ": " + why); }

  const std::vector<std::uint8_t>& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
};

std::vector<std::uint8_t> decode_png(const std::vector<std::uint8_t>& bytes, const std::string& path,
                                     std::uint32_t format, std::size_t& height, std::size_t& width) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
    throw std::runtime_error(path + ": " + png.image.message);
  }
  png.image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(path + ": " + png.image.message);
  }
  height = png.image.height;
  width = png.image.width;
  return pixels;
}

void encode_png(const std::string& path, std::uint32_t format, std::size_t height, std::size_t width,
                const std::vector<std::uint8_t>& pixels) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(width);
  png.image.height = static_cast<png_uint_32>(height);
  png.image.format = format;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(path + ": " + png.image.message);
  }
}

bool is_png(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::equal(sig, sig + 8, bytes.begin());
}

bool has_extension(const std::string& path, const std::string& ext) {
  if (path.size() < ext.size()) return false;
  return std::equal(ext.rbegin(), ext.rend(), path.rbegin(),
                    [](char a, char b) { return a == std::tolower(static_cast<unsigned char>(b)); });
}

}  // namespace

std::uint8_t to_byte(double value) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

Tensor read_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  if (is_png(bytes)) {
    std::size_t h = 0, w = 0;
    const auto pixels = decode_png(bytes, path, PNG_FORMAT_GRAY, h, w);
    std::vector<double> values(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = pixels[i] / 255.0;
    return Tensor({h, w}, std::move(values));
  }
  if (bytes.size() >= 2 && bytes[0] == 'P') return PgmReader(bytes, path).read();
  throw std::runtime_error(path + ": unsupported image format (expected PNG or PGM)");
}

void write_pgm(const std::string& path, const Tensor& image) {
  check_image(image, "write_pgm");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (double v : image.values()) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw std::runtime_error(path + ": write failed");
}

void write_png_gray(const std::string& path, const Tensor& image) {
  check_image(image, "write_png_gray");
  std::vector<std::uint8_t> pixels(image.numel());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(image.at(i));
  encode_png(path, PNG_FORMAT_GRAY, image.dim(0), image.dim(1), pixels);
}

void write_png_rgb(const std::string& path, const RgbImage& image) {
  if (image.pixels.size() != image.height * image.width * 3 || image.pixels.empty()) {
    throw std::invalid_argument("write_png_rgb: pixel buffer does not match " +
                                std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  encode_png(path, PNG_FORMAT_RGB, image.height, image.width, image.pixels);
}

RgbImage read_png_rgb(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  if (!is_png(bytes)) throw std::runtime_error(path + ": not a PNG file");
  RgbImage img;
  img.pixels = decode_png(bytes, path, PNG_FORMAT_RGB, img.height, img.width);
  return img;
}

void write_gray(const std::string& path, const Tensor& image) {
  if (has_extension(path, ".png")) {
    write_png_gray(path, image);
  } else if (has_extension(path, ".pgm")) {
    write_pgm(path, image);
  } else {
    throw std::invalid_argument(path + ": image output must end in .png or .pgm");
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  check_image(image, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize_bilinear: zero output extent");
  const std::size_t in_h = image.dim(0), in_w = image.dim(1);
  if (in_h == out_h && in_w == out_w) return image.clone();

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0,
                                    static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[o] = Tap{lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const std::vector<Tap> ty = taps(in_h, out_h), tx = taps(in_w, out_w);
  const auto in = image.values();
  std::vector<double> out(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double* r0 = in.data() + ty[i].lo * in_w;
    const double* r1 = in.data() + ty[i].hi * in_w;
    const double fy = ty[i].frac;
    for (std::size_t j = 0; j < out_w; ++j) {
      const Tap& c = tx[j];
      const double top = r0[c.lo] + c.frac * (r0[c.hi] - r0[c.lo]);
      const double bottom = r1[c.lo] + c.frac * (r1[c.hi] - r1[c.lo]);
      out[i * out_w + j] = top + fy * (bottom - top);
    }
  }
  return Tensor({out_h, out_w}, std::move(out));
}

Tensor preprocess(const std::string& path, std::size_t size) {
  return resize_bilinear(read_image(path), size, size);
}

}  // namespace covidnet::data

#include "agln/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace agln {
namespace {

// Decodes any PNG into 8-bit samples with `channels` = 1 (gray) or 3 (RGB).
std::vector<std::uint8_t> decode_png(const std::filesystem::path& path, int channels, std::size_t& width,
                                     std::size_t& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw ImageIoError("cannot decode " + path.string() + ": " + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageIoError("cannot decode " + path.string() + ": " + image.message);
  }
  width = image.width;
  height = image.height;
  return buf;
}

void encode_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int channels,
                const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height * static_cast<std::size_t>(channels)) {
    throw ImageIoError("write_png: pixel buffer does not match dimensions");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw ImageIoError("cannot write " + path.string() + ": " + image.message);
  }
}

}  // namespace

float level_to_unit(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

std::uint8_t unit_to_level(float x) {
  const float v = std::round((x + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
}

Tensor<float> to_tensor(const RgbImage& img) {
  Tensor<float> t(Shape{1, 3, img.height, img.width});
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) t.at(0, ch, r, c) = level_to_unit(img.at(r, c, ch));
  return t;
}

RgbImage from_tensor(const Tensor<float>& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3) {
    throw ShapeError("from_tensor: expected (1,3,H,W), got " + shape_str(t.shape()));
  }
  RgbImage img(t.dim(3), t.dim(2));
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = unit_to_level(t.at(0, ch, r, c));
  return img;
}

RgbImage read_png(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = decode_png(path, 3, img.width, img.height);
  return img;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  GrayImage img;
  img.pixels = decode_png(path, 1, img.width, img.height);
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  encode_png(path, img.width, img.height, 3, img.pixels);
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  encode_png(path, img.width, img.height, 1, img.pixels);
}

void write_pgm16(const std::filesystem::path& path, std::size_t width, std::size_t height,
                 const std::vector<std::uint16_t>& samples, const std::string& comment) {
  if (samples.size() != width * height) throw ImageIoError("write_pgm16: sample count does not match dimensions");
  if (comment.find('\n') != std::string::npos) throw ImageIoError("write_pgm16: comment must be one line");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot open " + path.string());
  out << "P5\n";
  if (!comment.empty()) out << "# " << comment << '\n';
  out << width << ' ' << height << "\n65535\n";
  for (const std::uint16_t s : samples) {
    const char be[2] = {static_cast<char>(s >> 8), static_cast<char>(s & 0xff)};
    out.write(be, 2);
  }
  if (!out) throw ImageIoError("write failed for " + path.string());
}

std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  // Header tokens may be separated by '#' comment lines.
  auto token = [&in]() {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    return std::string();
  };
  const std::string magic = token();
  std::size_t maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ImageIoError(path.string() + ": malformed PGM header");
  }
  in.get();
  if (magic != "P5" || maxval != 65535) throw ImageIoError(path.string() + " is not a 16-bit binary PGM");
  std::vector<std::uint16_t> samples(width * height);
  for (auto& s : samples) {
    unsigned char be[2];
    in.read(reinterpret_cast<char*>(be), 2);
    s = static_cast<std::uint16_t>((be[0] << 8) | be[1]);
  }
  if (!in) throw ImageIoError("truncated PGM " + path.string());
  return samples;
}

}  // namespace agln

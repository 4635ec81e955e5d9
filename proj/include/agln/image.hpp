#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "agln/tensor.hpp"

namespace agln {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t row, std::size_t col, std::size_t ch) { return pixels[(row * width + col) * 3 + ch]; }
  std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch) const {
    return pixels[(row * width + col) * 3 + ch];
  }
  bool operator==(const RgbImage&) const = default;
};

// Single-channel 8-bit raster, used for binary masks on disk.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const GrayImage&) const = default;
};

// 8-bit level <-> [-1, 1]; the round trip is exact on all 256 levels.
float level_to_unit(std::uint8_t v);
std::uint8_t unit_to_level(float x);

// (1, 3, H, W) tensor in [-1, 1].
Tensor<float> to_tensor(const RgbImage& img);
RgbImage from_tensor(const Tensor<float>& t);

RgbImage read_png(const std::filesystem::path& path);
GrayImage read_png_gray(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);
void write_png(const std::filesystem::path& path, const GrayImage& img);

// Binary 16-bit PGM (P5, maxval 65535, big-endian samples), with an optional header comment.
void write_pgm16(const std::filesystem::path& path, std::size_t width, std::size_t height,
                 const std::vector<std::uint16_t>& samples, const std::string& comment = "");
std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, std::size_t& width, std::size_t& height);

}  // namespace agln

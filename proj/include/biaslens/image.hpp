#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/tensor.hpp"

namespace biaslens {

// RGB image with HWC pixels in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;
};

/// round(p * 255) after clamping to [0, 1].
unsigned char quantize_channel(double p);
/// Snaps every value onto the 8-bit grid that PNG files can hold.
Tensor quantize(const Tensor& pixels);

/// 8-bit RGB PNG. Identical input gives identical bytes.
std::string encode_png(std::span<const double> pixels, std::size_t width, std::size_t height);
/// Accepts any PNG libpng can read; alpha is dropped and gray is expanded.
/// Throws FormatError on malformed data.
Image decode_png(std::string_view bytes);

void write_png(const std::filesystem::path& path, std::span<const double> pixels,
               std::size_t width, std::size_t height);
Image read_png(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
/// Throws FormatError on characters outside the standard alphabet or bad padding.
std::string base64_decode(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace biaslens

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "icao/tensor.hpp"

namespace icao {

/// RGB image, height x width x 3 interleaved, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) noexcept { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const noexcept {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool same_shape(const Image& o) const noexcept { return height == o.height && width == o.width; }
  bool operator==(const Image&) const = default;
};

/// 8 region maps (head coverings, hair, eyeglasses, eyes, mouth, full face, torso, background).
using MaskSet = Tensor3;

/// Binary netpbm I/O: P6 (RGB) and P5 (gray), maxval up to 65535. Writes 8-bit files.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);
/// Reads a P5 file as a single-channel map in [0,1].
Tensor3 read_gray(const std::filesystem::path& path);
void write_gray(const std::filesystem::path& path, const Tensor3& map, int channel = 0);

/// Bilinear resampling with half-pixel centers (align_corners = false).
Image resize(const Image& image, int height, int width);
Tensor3 resize(const Tensor3& maps, int height, int width);

/// 3 x H x W planar copy of an interleaved image.
Tensor3 to_planar(const Image& image);

}  // namespace icao

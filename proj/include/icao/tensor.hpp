// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace icao {

/// Dense channels x height x width array of doubles, row-major within a channel.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(const Tensor3& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  double& at(int c, int y, int x) noexcept { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const noexcept {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::span<double> channel(int c) noexcept { return {data.data() + c * plane(), plane()}; }
  std::span<const double> channel(int c) const noexcept { return {data.data() + c * plane(), plane()}; }

  bool operator==(const Tensor3&) const = default;
};

}  // namespace icao

// SPDX-License-Identifier: Apache-2.0
#include "icao/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "icao/errors.hpp"

namespace icao {

namespace {

struct PnmHeader {
  char kind = 0;  // '5' or '6'
  int width = 0;
  int height = 0;
  int maxval = 0;
};

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v) || v <= 0) throw DataError("malformed netpbm header in " + path.string());
  return v;
}

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw DataError("unsupported image format (expected binary PGM/PPM): " + path.string());
  }
  PnmHeader h;
  h.kind = magic[1];
  h.width = read_header_int(in, path);
  h.height = read_header_int(in, path);
  h.maxval = read_header_int(in, path);
  if (h.maxval > 65535) throw DataError("netpbm maxval too large in " + path.string());
  in.get();  // single whitespace byte before the raster
  return h;
}

std::vector<double> read_raster(std::istream& in, const PnmHeader& h, int channels,
                                const std::filesystem::path& path) {
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * channels;
  const int bytes = h.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError("truncated raster in " + path.string());
  std::vector<double> out(n);
  const double scale = 1.0 / h.maxval;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bytes == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    out[i] = std::min(1.0, v * scale);
  }
  return out;
}

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_pnm(const std::filesystem::path& path, char kind, int width, int height,
               const std::vector<unsigned char>& raster) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << 'P' << kind << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Source coordinate and weights for one output index under half-pixel alignment.
struct Tap {
  int i0, i1;
  double w1;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, src - i0};
  }
  return t;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  PnmHeader h = read_header(in, path);
  Image img;
  img.height = h.height;
  img.width = h.width;
  if (h.kind == '6') {
    img.data = read_raster(in, h, 3, path);
  } else {
    auto gray = read_raster(in, h, 1, path);
    img.data.resize(gray.size() * 3);
    for (std::size_t i = 0; i < gray.size(); ++i) img.data[3 * i] = img.data[3 * i + 1] = img.data[3 * i + 2] = gray[i];
  }
  return img;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  std::vector<unsigned char> raster(image.data.size());
  std::transform(image.data.begin(), image.data.end(), raster.begin(), quantize);
  write_pnm(path, '6', image.width, image.height, raster);
}

Tensor3 read_gray(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open mask " + path.string());
  PnmHeader h = read_header(in, path);
  if (h.kind != '5') throw DataError("mask must be a binary PGM: " + path.string());
  Tensor3 t;
  t.channels = 1;
  t.height = h.height;
  t.width = h.width;
  t.data = read_raster(in, h, 1, path);
  return t;
}

void write_gray(const std::filesystem::path& path, const Tensor3& map, int channel) {
  auto plane = map.channel(channel);
  std::vector<unsigned char> raster(plane.size());
  std::transform(plane.begin(), plane.end(), raster.begin(), quantize);
  write_pnm(path, '5', map.width, map.height, raster);
}

Image resize(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  Tensor3 planar = to_planar(image);
  Tensor3 r = resize(planar, height, width);
  Image out(height, width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(y, x, c) = r.at(c, y, x);
  return out;
}

Tensor3 resize(const Tensor3& maps, int height, int width) {
  if (maps.height == height && maps.width == width) return maps;
  if (height <= 0 || width <= 0 || maps.height <= 0 || maps.width <= 0) throw ShapeError("resize: empty extent");
  const auto ty = taps(maps.height, height);
  const auto tx = taps(maps.width, width);
  Tensor3 out(maps.channels, height, width);
  for (int c = 0; c < maps.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < width; ++x) {
        const Tap& b = tx[x];
        const double top = maps.at(c, a.i0, b.i0) * (1 - b.w1) + maps.at(c, a.i0, b.i1) * b.w1;
        const double bot = maps.at(c, a.i1, b.i0) * (1 - b.w1) + maps.at(c, a.i1, b.i1) * b.w1;
        out.at(c, y, x) = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return out;
}

Tensor3 to_planar(const Image& image) {
  Tensor3 t(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = image.at(y, x, c);
  return t;
}

}  // namespace icao

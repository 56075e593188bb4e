#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "sstab/error.hpp"

namespace sstab {

// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  Raster() = default;
  Raster(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

namespace detail {

inline int read_pnm_int(std::istream& in) {
  int c = in.peek();
  while (in && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = -1;
  if (!(in >> v)) throw DataError("PNM: malformed header");
  return v;
}

}  // namespace detail

// Binary PPM (P6) or PGM (P5), maxval 255.
inline Raster read_pnm(std::istream& in) {
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) throw DataError("PNM: expected P5 or P6");
  const int channels = magic[1] == '6' ? 3 : 1;
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("PNM: unsupported dimensions or maxval");
  in.get();  // single whitespace before the raster
  Raster r(w, h, channels);
  in.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
  if (!in) throw DataError("PNM: truncated raster");
  return r;
}

inline void write_pnm(std::ostream& out, const Raster& r) {
  out << (r.channels == 3 ? "P6" : "P5") << '\n' << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
}

inline Raster read_pnm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_pnm(in);
}

inline void write_pnm_file(const std::string& path, const Raster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_pnm(out, r);
}

}  // namespace sstab

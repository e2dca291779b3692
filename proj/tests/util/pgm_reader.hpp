#pragma once

// Minimal P5/P6 reader used as an independent oracle for grid emission
// round-trips. Kept separate from the library writer on purpose.

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace advkit::testing {

struct PnmImage {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;  // row-major, interleaved channels
};

inline PnmImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pnm: cannot open " + path);
  std::string magic;
  in >> magic;
  PnmImage img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    throw std::runtime_error("read_pnm: unsupported magic " + magic);
  int maxval = 0;
  in >> img.width >> img.height >> maxval;
  if (maxval != 255) throw std::runtime_error("read_pnm: expected maxval 255");
  in.get();  // single whitespace after the header
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error("read_pnm: truncated payload");
  return img;
}

}  // namespace advkit::testing

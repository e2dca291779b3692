#include "advkit/image_grid.hpp"

#include <cmath>
#include <fstream>

namespace advkit {

void emit_image_grid(const std::vector<TensorF>& images, int rows, int cols,
                     const std::string& path) {
  if (images.empty()) throw Error("emit_image_grid: no images");
  if (rows < 1 || cols < 1 || static_cast<std::size_t>(rows) * cols < images.size())
    throw Error("emit_image_grid: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                " cannot hold " + std::to_string(images.size()) + " images");

  Shape s = images.front().shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3) throw Error("emit_image_grid: image shape must be {H,W,C}, got " +
                                 shape_str(images.front().shape()));
  const int64_t h = s[0], w = s[1], c = s[2];
  if (c != 1 && c != 3)
    throw Error("emit_image_grid: " + std::to_string(c) + " channels (want 1 or 3)");

  for (const TensorF& img : images) {
    Shape is = img.shape();
    if (is.size() == 4 && is[0] == 1) is.erase(is.begin());
    if (is != s) throw Error("emit_image_grid: mixed image shapes " + shape_str(s) + " vs " +
                             shape_str(img.shape()));
    for (float v : img.values())
      if (v < 0.0f || v > 1.0f)
        throw Error("emit_image_grid: pixel value " + std::to_string(v) + " outside [0,1]");
  }

  const int64_t grid_w = cols * w + (cols - 1);
  const int64_t grid_h = rows * h + (rows - 1);
  constexpr unsigned char kSeparator = 128;
  std::vector<unsigned char> canvas(static_cast<std::size_t>(grid_h * grid_w * c), kSeparator);

  for (std::size_t i = 0; i < images.size(); ++i) {
    const int64_t r = static_cast<int64_t>(i) / cols;
    const int64_t col = static_cast<int64_t>(i) % cols;
    const int64_t y0 = r * (h + 1), x0 = col * (w + 1);
    const auto vals = images[i].values();
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch) {
          const float v = vals[(y * w + x) * c + ch];
          canvas[((y0 + y) * grid_w + (x0 + x)) * c + ch] =
              static_cast<unsigned char>(std::lround(v * 255.0f));
        }
  }
  // Unused trailing cells stay separator-gray.

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("emit_image_grid: cannot open '" + path + "' for writing");
  out << (c == 1 ? "P5" : "P6") << "\n" << grid_w << " " << grid_h << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
  if (!out) throw Error("emit_image_grid: write failed for '" + path + "'");
}

}  // namespace advkit

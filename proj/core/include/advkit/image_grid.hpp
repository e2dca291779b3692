#pragma once

#include <string>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit {

// Writes images as a PGM (P5, one channel) or PPM (P6, three channels) grid
// with 1-pixel mid-gray separators. Images must share one shape, given as
// {H,W,C} or {1,H,W,C}, with values in [0,1]; out-of-range values are an
// error (clamping is the producer's job). Pixels are stored as
// round(value*255). rows*cols must cover the image count.
void emit_image_grid(const std::vector<TensorF>& images, int rows, int cols,
                     const std::string& path);

}  // namespace advkit

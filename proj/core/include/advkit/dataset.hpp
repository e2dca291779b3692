#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit {

// Labeled image set; pixels scaled to [0,1]. Images are stored flat in
// {count, H, W, C} order.
struct Dataset {
  int64_t count = 0;
  Shape image_shape;  // {H,W,C}
  std::vector<float> images;
  std::vector<int> labels;
  std::string split;        // "train" | "test" | free-form
  std::string fingerprint;  // source description + content hash

  int64_t pixels_per_image() const { return shape_numel(image_shape); }
  // {1,H,W,C} copy of one instance.
  TensorF image(int64_t i) const;
  // {B,H,W,C} copy of the given instances.
  TensorF gather(std::span<const int64_t> indices) const;
  // Contiguous sub-range [from, from+n).
  Dataset slice(int64_t from, int64_t n) const;
};

// IDX ingestion (big-endian magic 0x00000803 for images, 0x00000801 for
// labels, unsigned-byte payload scaled by 1/255). Wrong magic, truncation
// and image/label count mismatch raise distinct errors.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Procedurally generated digit-like 28x28x1 images: seven-segment glyphs
// under random affine jitter, stroke width, brightness and pixel noise.
// Fully determined by (count, seed); class labels are uniform.
Dataset synthetic_digits(int64_t count, uint64_t seed, const std::string& split);

// FNV-1a 64-bit over arbitrary bytes, hex-encoded. Used for content
// fingerprints (not cryptographic).
uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::string fnv1a64_hex(std::span<const unsigned char> bytes);
std::string fnv1a64_hex(const std::string& text);

}  // namespace advkit

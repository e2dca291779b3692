#include "advkit/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "advkit/rng.hpp"

namespace advkit {

TensorF Dataset::image(int64_t i) const {
  if (i < 0 || i >= count) throw Error("dataset: index " + std::to_string(i) + " out of range");
  const int64_t px = pixels_per_image();
  Shape s{1};
  s.insert(s.end(), image_shape.begin(), image_shape.end());
  std::vector<float> v(images.begin() + i * px, images.begin() + (i + 1) * px);
  return TensorF(std::move(s), std::move(v));
}

TensorF Dataset::gather(std::span<const int64_t> indices) const {
  const int64_t px = pixels_per_image();
  Shape s{static_cast<int64_t>(indices.size())};
  s.insert(s.end(), image_shape.begin(), image_shape.end());
  std::vector<float> v;
  v.reserve(indices.size() * static_cast<std::size_t>(px));
  for (int64_t i : indices) {
    if (i < 0 || i >= count) throw Error("dataset: index " + std::to_string(i) + " out of range");
    v.insert(v.end(), images.begin() + i * px, images.begin() + (i + 1) * px);
  }
  return TensorF(std::move(s), std::move(v));
}

Dataset Dataset::slice(int64_t from, int64_t n) const {
  if (from < 0 || n < 0 || from + n > count)
    throw Error("dataset: slice [" + std::to_string(from) + "," + std::to_string(from + n) +
                ") out of range for " + std::to_string(count) + " instances");
  const int64_t px = pixels_per_image();
  Dataset out;
  out.count = n;
  out.image_shape = image_shape;
  out.images.assign(images.begin() + from * px, images.begin() + (from + n) * px);
  out.labels.assign(labels.begin() + from, labels.begin() + from + n);
  out.split = split;
  out.fingerprint = fingerprint + ":slice(" + std::to_string(from) + "," + std::to_string(n) + ")";
  return out;
}

// ---- fingerprints ----

uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(std::span<const unsigned char> bytes) {
  static const char* digits = "0123456789abcdef";
  uint64_t h = fnv1a64(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string fnv1a64_hex(const std::string& text) {
  return fnv1a64_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

// ---- IDX ----

namespace {

uint32_t read_be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_idx: cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (img.size() < 16) throw Error("load_idx: images file truncated header (" +
                                   std::to_string(img.size()) + " bytes)");
  const uint32_t img_magic = read_be32(img.data());
  if (img_magic != 0x00000803u)
    throw Error("load_idx: images magic 0x00000803 expected, got " + std::to_string(img_magic));
  const int64_t n = read_be32(img.data() + 4);
  const int64_t rows = read_be32(img.data() + 8);
  const int64_t cols = read_be32(img.data() + 12);
  const std::size_t expect_img = 16 + static_cast<std::size_t>(n * rows * cols);
  if (img.size() != expect_img)
    throw Error("load_idx: images payload expected " + std::to_string(expect_img) +
                " bytes, file has " + std::to_string(img.size()));

  if (lab.size() < 8) throw Error("load_idx: labels file truncated header (" +
                                  std::to_string(lab.size()) + " bytes)");
  const uint32_t lab_magic = read_be32(lab.data());
  if (lab_magic != 0x00000801u)
    throw Error("load_idx: labels magic 0x00000801 expected, got " + std::to_string(lab_magic));
  const int64_t ln = read_be32(lab.data() + 4);
  const std::size_t expect_lab = 8 + static_cast<std::size_t>(ln);
  if (lab.size() != expect_lab)
    throw Error("load_idx: labels payload expected " + std::to_string(expect_lab) +
                " bytes, file has " + std::to_string(lab.size()));
  if (n != ln)
    throw Error("load_idx: " + std::to_string(n) + " images vs " + std::to_string(ln) + " labels");

  Dataset d;
  d.count = n;
  d.image_shape = {rows, cols, 1};
  d.images.resize(static_cast<std::size_t>(n * rows * cols));
  for (std::size_t i = 0; i < d.images.size(); ++i)
    d.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < d.labels.size(); ++i) d.labels[i] = lab[8 + i];
  d.fingerprint = "idx:" + fnv1a64_hex(std::span<const unsigned char>(img)) + ":" +
                  fnv1a64_hex(std::span<const unsigned char>(lab));
  return d;
}

// ---- synthetic digits ----

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

// Seven-segment layout in a unit box (x right, y down).
// Order: A top, B top-right, C bottom-right, D bottom, E bottom-left,
// F top-left, G middle.
constexpr std::array<Segment, 7> kSegments{{
    {0.22, 0.10, 0.78, 0.10},  // A
    {0.78, 0.10, 0.78, 0.50},  // B
    {0.78, 0.50, 0.78, 0.90},  // C
    {0.22, 0.90, 0.78, 0.90},  // D
    {0.22, 0.50, 0.22, 0.90},  // E
    {0.22, 0.10, 0.22, 0.50},  // F
    {0.22, 0.50, 0.78, 0.50},  // G
}};

constexpr std::array<uint8_t, 10> kDigitSegments{{
    0b0111111,  // 0: ABCDEF
    0b0000110,  // 1: BC
    0b1011011,  // 2: ABDEG
    0b1001111,  // 3: ABCDG
    0b1100110,  // 4: BCFG
    0b1101101,  // 5: ACDFG
    0b1111101,  // 6: ACDEFG
    0b0000111,  // 7: ABC
    0b1111111,  // 8: all
    0b1101111,  // 9: ABCDFG
}};

double dist_to_segment(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
  return std::hypot(px - cx, py - cy);
}

}  // namespace

Dataset synthetic_digits(int64_t count, uint64_t seed, const std::string& split) {
  constexpr int kSize = 28;
  Dataset d;
  d.count = count;
  d.image_shape = {kSize, kSize, 1};
  d.images.resize(static_cast<std::size_t>(count) * kSize * kSize);
  d.labels.resize(static_cast<std::size_t>(count));

  for (int64_t idx = 0; idx < count; ++idx) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(idx), 0x5d191757u));
    const int label = static_cast<int>(rng.below(10));
    d.labels[static_cast<std::size_t>(idx)] = label;

    // Per-image affine jitter: rotation, anisotropic scale, shear, shift.
    const double angle = rng.uniform(-0.16, 0.16);
    const double sx = rng.uniform(0.85, 1.15);
    const double sy = rng.uniform(0.85, 1.15);
    const double shear = rng.uniform(-0.12, 0.12);
    const double tx = rng.uniform(-2.2, 2.2);
    const double ty = rng.uniform(-2.2, 2.2);
    const double thickness = rng.uniform(1.4, 2.4);
    const double brightness = rng.uniform(0.75, 1.0);
    const double noise_sigma = 0.03;

    const double ca = std::cos(angle), sa = std::sin(angle);
    const double extent = 22.0;  // glyph box in pixels before jitter
    const double cx = kSize / 2.0 + tx, cy = kSize / 2.0 + ty;

    // Transform segment endpoints from glyph space into pixel space.
    std::array<Segment, 7> segs;
    for (std::size_t s = 0; s < 7; ++s) {
      auto map_point = [&](double gx, double gy, double& ox, double& oy) {
        double x = (gx - 0.5) * extent * sx;
        double y = (gy - 0.5) * extent * sy;
        x += shear * y;
        ox = cx + ca * x - sa * y;
        oy = cy + sa * x + ca * y;
      };
      map_point(kSegments[s].x0, kSegments[s].y0, segs[s].x0, segs[s].y0);
      map_point(kSegments[s].x1, kSegments[s].y1, segs[s].x1, segs[s].y1);
    }

    const uint8_t lit = kDigitSegments[static_cast<std::size_t>(label)];
    float* img = d.images.data() + idx * kSize * kSize;
    for (int py = 0; py < kSize; ++py) {
      for (int px = 0; px < kSize; ++px) {
        double best = 1e9;
        for (std::size_t s = 0; s < 7; ++s) {
          if (!(lit & (1u << s))) continue;
          best = std::min(best, dist_to_segment(px + 0.5, py + 0.5, segs[s]));
        }
        // Anti-aliased capsule: full intensity inside the stroke, linear
        // falloff over one pixel.
        double v = brightness * std::clamp(thickness * 0.5 + 0.5 - best, 0.0, 1.0);
        v += rng.normal(noise_sigma);
        img[py * kSize + px] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  d.split = split;
  d.fingerprint = "synthetic:v1:seed=" + std::to_string(seed) +
                  ":count=" + std::to_string(count) + ":" +
                  fnv1a64_hex(std::span<const unsigned char>(
                      reinterpret_cast<const unsigned char*>(d.images.data()),
                      d.images.size() * sizeof(float)));
  return d;
}

}  // namespace advkit

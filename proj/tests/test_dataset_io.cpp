#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "advkit/dataset.hpp"
#include "advkit/image_grid.hpp"
#include "advkit/rng.hpp"
#include "advkit/serialize.hpp"
#include "util/pgm_reader.hpp"

using namespace advkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("advkit_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

// 3 images of 2x2 with pixel value = image index * 60 + pixel index.
std::vector<unsigned char> idx_images(int n = 3, int rows = 2, int cols = 2) {
  std::vector<unsigned char> v;
  push_be32(v, 0x00000803);
  push_be32(v, static_cast<uint32_t>(n));
  push_be32(v, static_cast<uint32_t>(rows));
  push_be32(v, static_cast<uint32_t>(cols));
  for (int i = 0; i < n * rows * cols; ++i) v.push_back(static_cast<unsigned char>(i));
  return v;
}

std::vector<unsigned char> idx_labels(std::vector<unsigned char> labels) {
  std::vector<unsigned char> v;
  push_be32(v, 0x00000801);
  push_be32(v, static_cast<uint32_t>(labels.size()));
  v.insert(v.end(), labels.begin(), labels.end());
  return v;
}

}  // namespace

TEST_CASE("idx ingestion parses shapes, labels and scaling") {
  TempDir dir;
  write_bytes(dir.file("img"), idx_images());
  write_bytes(dir.file("lab"), idx_labels({7, 0, 9}));
  Dataset d = load_idx(dir.file("img"), dir.file("lab"));
  CHECK(d.count == 3);
  CHECK(d.image_shape == Shape{2, 2, 1});
  CHECK(d.labels == std::vector<int>{7, 0, 9});
  CHECK(d.images[0] == doctest::Approx(0.0f));
  CHECK(d.images[5] == doctest::Approx(5.0f / 255.0f));
  CHECK(d.fingerprint.substr(0, 4) == "idx:");
}

TEST_CASE("idx ingestion fails loudly on malformed files") {
  TempDir dir;
  write_bytes(dir.file("lab"), idx_labels({1, 2, 3}));

  SUBCASE("wrong magic") {
    auto img = idx_images();
    img[3] = 0x99;
    write_bytes(dir.file("img"), img);
    CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")),
                         doctest::Contains("magic"), Error);
  }
  SUBCASE("truncated payload names byte counts") {
    auto img = idx_images();
    img.resize(img.size() - 2);
    write_bytes(dir.file("img"), img);
    CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")),
                         doctest::Contains("expected 28 bytes"), Error);
  }
  SUBCASE("image/label count mismatch") {
    write_bytes(dir.file("img"), idx_images());
    write_bytes(dir.file("lab2"), idx_labels({1, 2}));
    CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab2")),
                         doctest::Contains("3 images vs 2 labels"), Error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_idx(dir.file("nope"), dir.file("lab")),
                         doctest::Contains("cannot open"), Error);
  }
}

TEST_CASE("synthetic digits are deterministic, labeled and in range") {
  Dataset a = synthetic_digits(64, 42, "train");
  Dataset b = synthetic_digits(64, 42, "train");
  CHECK(a.fingerprint == b.fingerprint);
  CHECK(a.images == b.images);

  Dataset c = synthetic_digits(64, 43, "train");
  CHECK(a.fingerprint != c.fingerprint);

  CHECK(a.count == 64);
  CHECK(a.image_shape == Shape{28, 28, 1});
  bool any_ink = false;
  for (float v : a.images) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    any_ink |= v > 0.5f;
  }
  CHECK(any_ink);
  for (int label : a.labels) {
    CHECK(label >= 0);
    CHECK(label <= 9);
  }
}

TEST_CASE("model files round-trip bit-exactly and reject bad headers") {
  TempDir dir;
  Classifier m = Classifier::make_conv(Activation::brelu, 10, 2024);
  const std::string path = dir.file("clf.advb");
  save_classifier(m, path, R"({"note":"round-trip"})", 2024);
  CHECK(model_kind(path) == "classifier");
  Classifier loaded = load_classifier(path);

  for (std::size_t p = 0; p < m.stack().params().size(); ++p) {
    const auto a = m.stack().params()[p].values();
    const auto b = loaded.stack().params()[p].values();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }

  // Same logits on probe inputs.
  ContextF ctx = ContextF::inference();
  Rng rng(9);
  for (int probe = 0; probe < 10; ++probe) {
    TensorF x({1, 28, 28, 1});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
    TensorF za = m.logits(ctx, x);
    TensorF zb = loaded.logits(ctx, x);
    for (int64_t k = 0; k < 10; ++k) CHECK(za.values()[k] == zb.values()[k]);
  }

  // Saving twice is byte-identical.
  const std::string path2 = dir.file("clf2.advb");
  save_classifier(m, path2, R"({"note":"round-trip"})", 2024);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);

  SUBCASE("corrupted magic is rejected") {
    auto bytes = c1;
    bytes[0] = 'X';
    const std::string bad = dir.file("bad.advb");
    std::ofstream(bad, std::ios::binary) << bytes;
    CHECK_THROWS_WITH_AS(load_classifier(bad), doctest::Contains("magic"), Error);
  }
  SUBCASE("version bump is an explicit incompatibility") {
    auto bytes = c1;
    bytes[4] = 2;  // little-endian version field
    const std::string bad = dir.file("v2.advb");
    std::ofstream(bad, std::ios::binary) << bytes;
    CHECK_THROWS_WITH_AS(load_classifier(bad), doctest::Contains("version 2"), Error);
  }
  SUBCASE("kind mismatch is reported") {
    CHECK_THROWS_WITH_AS(load_autoencoder(path), doctest::Contains("classifier"), Error);
  }
}

TEST_CASE("autoencoder and preprocessor files round-trip") {
  TempDir dir;
  Autoencoder ae = Autoencoder::make_dense({28, 28, 1}, 5);
  save_autoencoder(ae, dir.file("ae.advb"));
  Autoencoder ae2 = load_autoencoder(dir.file("ae.advb"));
  CHECK(ae.stack().params()[0].values()[0] == ae2.stack().params()[0].values()[0]);

  Preprocessor g = Preprocessor::make_dense({28, 28, 1}, 6);
  save_preprocessor(g, dir.file("g.advb"));
  Preprocessor g2 = load_preprocessor(dir.file("g.advb"));
  ContextF ctx = ContextF::inference();
  TensorF x({1, 28, 28, 1});
  for (auto& v : x.values()) v = 0.25f;
  TensorF ya = g.apply(ctx, x), yb = g2.apply(ctx, x);
  for (std::size_t i = 0; i < ya.values().size(); ++i) CHECK(ya.values()[i] == yb.values()[i]);
}

TEST_CASE("image grid geometry, black payload and quantization round-trip") {
  TempDir dir;

  SUBCASE("10x10 grid of 28px tiles is 289 wide") {
    std::vector<TensorF> images(100, TensorF({28, 28, 1}));
    const std::string path = dir.file("grid.pgm");
    emit_image_grid(images, 10, 10, path);
    auto img = testing::read_pnm(path);
    CHECK(img.width == 10 * 28 + 9);
    CHECK(img.height == 10 * 28 + 9);
  }

  SUBCASE("single black image gives an all-zero payload") {
    std::vector<TensorF> images(1, TensorF({2, 2, 1}));
    const std::string path = dir.file("black.pgm");
    emit_image_grid(images, 1, 1, path);
    auto img = testing::read_pnm(path);
    for (unsigned char p : img.pixels) CHECK(p == 0);
  }

  SUBCASE("read-back matches inputs within one quantization step") {
    Rng rng(77);
    std::vector<TensorF> images;
    for (int i = 0; i < 6; ++i) {
      TensorF t({5, 4, 1});
      for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
      images.push_back(t);
    }
    const std::string path = dir.file("roundtrip.pgm");
    emit_image_grid(images, 2, 3, path);
    auto img = testing::read_pnm(path);
    for (int i = 0; i < 6; ++i) {
      const int r = i / 3, c = i % 3;
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 4; ++x) {
          const float v = images[static_cast<std::size_t>(i)].values()[y * 4 + x];
          const unsigned char byte =
              img.pixels[static_cast<std::size_t>((r * 6 + y) * img.width + (c * 5 + x))];
          CHECK(std::abs(v - static_cast<float>(byte) / 255.0f) <= 1.0f / 255.0f);
        }
    }
  }

  SUBCASE("out-of-range pixels are the producer's bug") {
    TensorF bad({2, 2, 1});
    bad.values()[0] = 1.5f;
    CHECK_THROWS_WITH_AS(emit_image_grid({bad}, 1, 1, dir.file("bad.pgm")),
                         doctest::Contains("outside"), Error);
  }

  SUBCASE("grid must hold all images") {
    std::vector<TensorF> images(5, TensorF({2, 2, 1}));
    CHECK_THROWS_AS(emit_image_grid(images, 2, 2, dir.file("small.pgm")), Error);
  }
}

#include <cmath>
#include <cstring>
#include <fstream>

#include <doctest.h>

#include "advkit/dataset.hpp"
#include "advkit/training.hpp"

using namespace advkit;

TEST_CASE("gaussian augmentation: sigma 0 is the identity") {
  Rng rng(1);
  Dataset d = synthetic_digits(4, 9, "t");
  TensorF x = d.image(0);
  TensorF y = gaussian_augment(x, 0.0, rng);
  CHECK(std::memcmp(x.values().data(), y.values().data(), x.numel() * sizeof(float)) == 0);
}

TEST_CASE("gaussian augmentation stays in [0,1] and adds noise") {
  Rng rng(2);
  Dataset d = synthetic_digits(4, 9, "t");
  TensorF x = d.image(1);
  TensorF y = gaussian_augment(x, 0.3, rng);
  bool changed = false;
  for (std::size_t i = 0; i < y.values().size(); ++i) {
    CHECK(y.values()[i] >= 0.0f);
    CHECK(y.values()[i] <= 1.0f);
    changed |= y.values()[i] != x.values()[i];
  }
  CHECK(changed);
}

TEST_CASE("noise draws hit the requested standard deviation within 2%") {
  Rng rng(3);
  const double sigma = 0.3;
  TensorF noise = gaussian_noise({100000}, sigma, rng);
  double sum = 0, sq = 0;
  for (float v : noise.values()) {
    sum += v;
    sq += double(v) * v;
  }
  const double n = double(noise.numel());
  const double std_hat = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(std::abs(std_hat - sigma) / sigma < 0.02);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("epochs"), Error);
  cfg = {};
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.augment_sigma = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("a 64-sample subset is memorized exactly") {
  Dataset train = synthetic_digits(64, 11, "train");
  TrainConfig cfg;
  cfg.epochs = 24;
  cfg.batch_size = 16;
  cfg.lr = 2e-3;
  cfg.seed = 4;
  auto res = train_classifier(train, train, cfg, Activation::relu);
  CHECK(res.train_accuracy == 1.0);
}

TEST_CASE("training is bit-reproducible under a fixed seed and seeds matter") {
  Dataset train = synthetic_digits(256, 21, "train");
  Dataset val = synthetic_digits(64, 22, "val");
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 77;
  auto a = train_classifier(train, val, cfg, Activation::brelu);
  auto b = train_classifier(train, val, cfg, Activation::brelu);
  for (std::size_t p = 0; p < a.model.stack().params().size(); ++p) {
    const auto av = a.model.stack().params()[p].values();
    const auto bv = b.model.stack().params()[p].values();
    CHECK(std::memcmp(av.data(), bv.data(), av.size() * sizeof(float)) == 0);
  }

  cfg.seed = 78;
  auto c = train_classifier(train, val, cfg, Activation::brelu);
  double l2 = 0;
  for (std::size_t p = 0; p < a.model.stack().params().size(); ++p) {
    const auto av = a.model.stack().params()[p].values();
    const auto cv = c.model.stack().params()[p].values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double diff = double(av[i]) - cv[i];
      l2 += diff * diff;
    }
  }
  CHECK(l2 > 0.0);
}

TEST_CASE("epoch losses are finite and go down early in training") {
  Dataset train = synthetic_digits(1200, 31, "train");
  Dataset val = synthetic_digits(300, 32, "val");
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 5;
  auto res = train_classifier(train, val, cfg, Activation::relu);
  REQUIRE(res.curve.epochs.size() == 5);
  for (const auto& e : res.curve.epochs) CHECK(std::isfinite(e.train_loss));
  // 3-epoch window means are non-increasing over the early curve.
  auto window = [&](std::size_t at) {
    return (res.curve.epochs[at].train_loss + res.curve.epochs[at + 1].train_loss +
            res.curve.epochs[at + 2].train_loss) /
           3.0;
  };
  CHECK(window(0) >= window(1));
  CHECK(window(1) >= window(2));
}

TEST_CASE("denoising autoencoder training improves over the untrained model") {
  Dataset train = synthetic_digits(1500, 41, "train");
  Dataset val = synthetic_digits(400, 42, "val");
  AETrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 128;
  cfg.lr = 2e-3;
  cfg.seed = 6;

  Autoencoder untrained = Autoencoder::make_dense(train.image_shape, mix_seed(cfg.seed, 0xAE));
  const double untrained_mse = reconstruction_mse(untrained, val);

  auto res = train_autoencoder(train, val, cfg);
  const double trained_mse = reconstruction_mse(res.model, val);
  CHECK(trained_mse < untrained_mse);

  // Validation error decreases monotonically across the first 3 epochs.
  REQUIRE(res.curve.epochs.size() == 3);
  CHECK(res.curve.epochs[0].val_metric > res.curve.epochs[1].val_metric);
  CHECK(res.curve.epochs[1].val_metric > res.curve.epochs[2].val_metric);

  // Plain reconstruction training (no corruption) works the same way.
  AETrainConfig plain = cfg;
  plain.noise_sigma = 0.0;
  auto res2 = train_autoencoder(train, val, plain);
  CHECK(reconstruction_mse(res2.model, val) < untrained_mse);

  // Distinct seeds end at distinct parameters.
  AETrainConfig other = cfg;
  other.seed = 7;
  auto res3 = train_autoencoder(train, val, other);
  double l2 = 0;
  for (std::size_t p = 0; p < res.model.stack().params().size(); ++p) {
    const auto av = res.model.stack().params()[p].values();
    const auto bv = res3.model.stack().params()[p].values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double diff = double(av[i]) - bv[i];
      l2 += diff * diff;
    }
  }
  CHECK(l2 > 0.0);
}

TEST_CASE("curve CSV is written with the expected header") {
  TrainCurve curve;
  curve.epochs.push_back({1, 0.5, 0.9});
  curve.epochs.push_back({2, 0.25, 0.95});
  const std::string path = "/tmp/advkit_curve_test.csv";
  write_curve_csv(curve, path);
  std::ifstream in(path);
  std::string header, row1;
  std::getline(in, header);
  std::getline(in, row1);
  CHECK(header == "epoch,train_loss,val_metric");
  CHECK(row1 == "1,0.5,0.9");
  std::remove(path.c_str());
}

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "advkit/evaluation.hpp"
#include "advkit/training.hpp"

using namespace advkit;
namespace fs = std::filesystem;

namespace {

const ClassifierTrainResult& eval_classifier() {
  static ClassifierTrainResult res = [] {
    Dataset train = synthetic_digits(1500, 500, "train");
    Dataset val = synthetic_digits(300, 501, "val");
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 19;
    return train_classifier(train, val, cfg, Activation::relu);
  }();
  return res;
}

EvalProtocol small_protocol() {
  EvalProtocol p;
  p.instances = 4;
  p.seed = 99;
  p.attack.iterations = 250;
  p.attack.binary_search_steps = 3;
  return p;
}

}  // namespace

TEST_CASE("metric aggregation conventions") {
  std::vector<InstanceRecord> records(3);
  for (int i = 0; i < 3; ++i) {
    records[static_cast<std::size_t>(i)].success = true;
    records[static_cast<std::size_t>(i)].distortion = 1.0 + i;
    records[static_cast<std::size_t>(i)].recovered_distortion =
        std::numeric_limits<double>::quiet_NaN();
  }
  Aggregates agg = compute_metrics(records);
  CHECK(agg.success_rate == 1.0);
  CHECK(agg.mean_distortion == doctest::Approx(2.0));

  records[1].success = false;
  records.resize(2);
  agg = compute_metrics(records);
  CHECK(agg.success_rate == 0.5);
  CHECK(agg.mean_distortion == doctest::Approx(1.0));

  CHECK_THROWS_WITH_AS(compute_metrics({}), doctest::Contains("empty"), Error);
}

TEST_CASE("zero-instance protocols produce an empty, flagged report") {
  EvalProtocol p = small_protocol();
  p.instances = 0;
  Dataset test = synthetic_digits(8, 502, "test");
  EvalReport report = run_whitebox_eval(eval_classifier().model, test, p);
  CHECK(report.records.empty());
  CHECK_FALSE(report.aggregates.has_value());
}

TEST_CASE("whitebox eval on the desk classifier attacks every instance") {
  Dataset test = synthetic_digits(8, 503, "test");
  EvalReport report = run_whitebox_eval(eval_classifier().model, test, small_protocol());
  REQUIRE(report.records.size() == 4);
  for (const auto& r : report.records) {
    CHECK(r.target != r.true_label);
    if (r.success) CHECK(r.achieved_class == r.target);
    CHECK(std::isfinite(r.distortion));
  }
  REQUIRE(report.aggregates.has_value());
  CHECK(report.aggregates->instances == 4);
  // Image dumps are aligned with the records.
  const auto px = static_cast<std::size_t>(shape_numel(report.image_shape));
  CHECK(report.original_images.size() == 4 * px);
  CHECK(report.adversarial_images.size() == 4 * px);
}

TEST_CASE("evals are reproducible and worker-count independent") {
  Dataset test = synthetic_digits(8, 504, "test");
  EvalProtocol p = small_protocol();
  EvalReport a = run_whitebox_eval(eval_classifier().model, test, p);
  p.workers = 3;
  EvalReport b = run_whitebox_eval(eval_classifier().model, test, p);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].target == b.records[i].target);
    CHECK(a.records[i].success == b.records[i].success);
    CHECK(a.records[i].distortion == b.records[i].distortion);
  }
  CHECK(a.adversarial_images == b.adversarial_images);
}

TEST_CASE("identity preprocessor eval matches whitebox eval on the same seeds") {
  Dataset test = synthetic_digits(8, 505, "test");
  EvalProtocol p = small_protocol();
  Preprocessor id = Preprocessor::identity(test.image_shape);
  EvalReport direct = run_whitebox_eval(eval_classifier().model, test, p);
  EvalReport through = run_preprocessor_eval(eval_classifier().model, id, test, p);
  REQUIRE(direct.records.size() == through.records.size());
  for (std::size_t i = 0; i < direct.records.size(); ++i) {
    CHECK(direct.records[i].distortion == through.records[i].distortion);
    CHECK(direct.records[i].success == through.records[i].success);
    // Recovered image is the adversarial image itself under identity G.
    CHECK(through.records[i].recovered_distortion ==
          doctest::Approx(direct.records[i].distortion).epsilon(1e-6));
  }
}

TEST_CASE("cycle_pairs targets avoid the true class and cycle") {
  Dataset test = synthetic_digits(30, 506, "test");
  EvalProtocol p = small_protocol();
  p.instances = 30;
  p.target_rule = TargetRule::cycle_pairs;
  p.attack.iterations = 1;  // target assignment is what matters here
  p.attack.binary_search_steps = 1;
  EvalReport report = run_whitebox_eval(eval_classifier().model, test, p);
  for (const auto& r : report.records) CHECK(r.target != r.true_label);
}

TEST_CASE("report json and csv round-trip") {
  Dataset test = synthetic_digits(8, 507, "test");
  EvalReport report = run_whitebox_eval(eval_classifier().model, test, small_protocol());
  report.config_fingerprint = "deadbeef";

  const fs::path dir = fs::temp_directory_path() / ("advkit_eval_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string jpath = (dir / "report.json").string();
  const std::string cpath = (dir / "report.csv").string();
  write_report_json(report, jpath);
  write_report_csv(report, cpath);

  EvalReport loaded = read_report_json(jpath);
  CHECK(loaded.protocol_kind == report.protocol_kind);
  CHECK(loaded.config_fingerprint == "deadbeef");
  REQUIRE(loaded.records.size() == report.records.size());
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    CHECK(loaded.records[i].index == report.records[i].index);
    CHECK(loaded.records[i].success == report.records[i].success);
    CHECK(loaded.records[i].distortion == report.records[i].distortion);
  }
  REQUIRE(loaded.aggregates.has_value());
  CHECK(loaded.aggregates->success_rate == report.aggregates->success_rate);
  CHECK(loaded.aggregates->mean_distortion == report.aggregates->mean_distortion);

  // Byte-identical re-serialization.
  const std::string jpath2 = (dir / "report2.json").string();
  write_report_json(loaded, jpath2);
  std::ifstream f1(jpath), f2(jpath2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  std::ifstream csv(cpath);
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "index,true_label,target,success,clean_rejected,detected,detected_by,"
        "achieved_class,distortion,recovered_distortion,c,d");

  CHECK_THROWS_AS(read_report_json((dir / "missing.json").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("image blobs round-trip") {
  const fs::path dir = fs::temp_directory_path() / ("advkit_blob_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string path = (dir / "imgs.advi").string();
  std::vector<float> data(2 * 4 * 3 * 1);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i) / 100.0f;
  write_image_blob(path, {4, 3, 1}, data);
  auto [shape, loaded] = read_image_blob(path);
  CHECK(shape == Shape{4, 3, 1});
  CHECK(loaded == data);
  fs::remove_all(dir);
}

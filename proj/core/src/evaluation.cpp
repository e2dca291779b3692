#include "advkit/evaluation.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "advkit/parallel.hpp"
#include "advkit/rng.hpp"

namespace advkit {

namespace {

using nlohmann::json;

constexpr uint64_t kTargetSalt = 0x7a9;
constexpr uint64_t kAttackSalt = 0xa77;
constexpr uint64_t kCleanCheckSalt = 0xc1e;
constexpr uint64_t kSubmitSalt = 0x5b1;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

int pick_target(TargetRule rule, uint64_t seed, int64_t index, int true_label, int64_t classes) {
  if (rule == TargetRule::uniform_incorrect) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(index), kTargetSalt));
    int t = static_cast<int>(rng.below(static_cast<uint64_t>(classes - 1)));
    if (t >= true_label) ++t;
    return t;
  }
  // cycle_pairs: the n-th instance of source class s gets the n-th incorrect
  // class, so modest instance counts cover every (source, target) pair.
  int t = static_cast<int>(index % (classes - 1));
  if (t >= true_label) ++t;
  return t;
}

double l2_between(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

void store_image(std::vector<float>& sink, const TensorF& img) {
  sink.insert(sink.end(), img.values().begin(), img.values().end());
}

struct SliceStore {
  // Per-instance slots merged in index order after the parallel section.
  std::vector<InstanceRecord> records;
  std::vector<std::vector<float>> orig, adv, recovered;
  explicit SliceStore(std::size_t n) : records(n), orig(n), adv(n), recovered(n) {}
};

EvalReport assemble(std::string kind, const EvalProtocol& protocol, const Dataset& test,
                    SliceStore&& store) {
  EvalReport report;
  report.protocol_kind = std::move(kind);
  report.protocol = protocol;
  report.image_shape = test.image_shape;
  report.records = std::move(store.records);
  for (auto& v : store.orig)
    report.original_images.insert(report.original_images.end(), v.begin(), v.end());
  for (auto& v : store.adv)
    report.adversarial_images.insert(report.adversarial_images.end(), v.begin(), v.end());
  for (auto& v : store.recovered)
    report.recovered_images.insert(report.recovered_images.end(), v.begin(), v.end());
  if (!report.records.empty()) report.aggregates = compute_metrics(report.records);
  return report;
}

void check_protocol(const EvalProtocol& protocol, const Dataset& test) {
  if (protocol.instances < 0) throw Error("eval: instance count must be >= 0");
  if (protocol.instances > test.count)
    throw Error("eval: protocol wants " + std::to_string(protocol.instances) +
                " instances, test split has " + std::to_string(test.count));
  protocol.attack.validate();
}

AttackConfig instance_attack_config(const EvalProtocol& protocol, int64_t index) {
  AttackConfig cfg = protocol.attack;
  cfg.seed = mix_seed(protocol.seed, static_cast<uint64_t>(index), kAttackSalt);
  return cfg;
}

}  // namespace

const char* target_rule_name(TargetRule r) {
  return r == TargetRule::uniform_incorrect ? "uniform_incorrect" : "cycle_pairs";
}

TargetRule target_rule_from_name(const std::string& name) {
  if (name == "uniform_incorrect") return TargetRule::uniform_incorrect;
  if (name == "cycle_pairs") return TargetRule::cycle_pairs;
  throw Error("unknown target rule '" + name + "'");
}

Aggregates compute_metrics(std::span<const InstanceRecord> records) {
  if (records.empty()) throw Error("compute_metrics: empty records");
  Aggregates agg;
  agg.instances = static_cast<int64_t>(records.size());
  double dist_sum = 0.0, rec_sum = 0.0;
  int64_t rec_n = 0;
  for (const InstanceRecord& r : records) {
    if (!r.success) continue;
    ++agg.successes;
    dist_sum += r.distortion;
    if (std::isfinite(r.recovered_distortion)) {
      rec_sum += r.recovered_distortion;
      ++rec_n;
    }
  }
  agg.success_rate = static_cast<double>(agg.successes) / static_cast<double>(agg.instances);
  agg.mean_distortion = agg.successes ? dist_sum / static_cast<double>(agg.successes) : kNan;
  agg.mean_recovered_distortion = rec_n ? rec_sum / static_cast<double>(rec_n) : kNan;
  return agg;
}

EvalReport run_whitebox_eval(const Classifier& model, const Dataset& test,
                             const EvalProtocol& protocol) {
  check_protocol(protocol, test);
  SliceStore store(static_cast<std::size_t>(protocol.instances));
  parallel_for(static_cast<std::size_t>(protocol.instances), protocol.workers, [&](std::size_t i) {
    const auto index = static_cast<int64_t>(i);
    const TensorF x = test.image(index);
    const int label = test.labels[i];
    const int target =
        pick_target(protocol.target_rule, protocol.seed, index, label, model.classes());
    AttackResult r = cw_l2(model, x, target, instance_attack_config(protocol, index));

    InstanceRecord rec;
    rec.index = index;
    rec.true_label = label;
    rec.target = target;
    // Success is re-derived from the stored image so the record is
    // self-consistent with a fresh forward pass.
    rec.achieved_class = model.classify(r.x_adv);
    rec.success = r.success && rec.achieved_class == target;
    rec.distortion = r.distortion;
    rec.recovered_distortion = kNan;
    rec.c_used = r.c_used;
    rec.d_used = r.d_used;
    store.records[i] = rec;
    store_image(store.orig[i], x);
    store_image(store.adv[i], r.x_adv);
  });
  return assemble("whitebox", protocol, test, std::move(store));
}

EvalReport run_preprocessor_eval(const Classifier& model, const Preprocessor& g,
                                 const Dataset& test, const EvalProtocol& protocol) {
  check_protocol(protocol, test);
  SliceStore store(static_cast<std::size_t>(protocol.instances));
  parallel_for(static_cast<std::size_t>(protocol.instances), protocol.workers, [&](std::size_t i) {
    const auto index = static_cast<int64_t>(i);
    const TensorF x = test.image(index);
    const int label = test.labels[i];
    const int target =
        pick_target(protocol.target_rule, protocol.seed, index, label, model.classes());
    AttackResult r =
        cw_l2_through_preprocessor(model, g, x, target, instance_attack_config(protocol, index));

    ContextF ictx = ContextF::inference();
    TensorF recovered = g.apply(ictx, r.x_adv);
    InstanceRecord rec;
    rec.index = index;
    rec.true_label = label;
    rec.target = target;
    rec.achieved_class = model.classify(recovered);
    rec.success = r.success && rec.achieved_class == target;
    rec.distortion = r.distortion;
    rec.recovered_distortion = l2_between(recovered.values(), x.values());
    rec.c_used = r.c_used;
    rec.d_used = r.d_used;
    store.records[i] = rec;
    store_image(store.orig[i], x);
    store_image(store.adv[i], r.x_adv);
    store_image(store.recovered[i], recovered);
  });
  return assemble("preprocessor", protocol, test, std::move(store));
}

EvalReport run_greybox_eval(const LocalEnsemble& attacker, const DefensePipeline& defender,
                            const Dataset& test, const EvalProtocol& protocol) {
  check_protocol(protocol, test);
  if (!defender.calibrated) throw Error("run_greybox_eval: defender pipeline not calibrated");
  for (const Detector& det : attacker.detectors)
    if (det.threshold < 0)
      throw Error("run_greybox_eval: attacker detector threshold not calibrated");
  const int64_t classes = defender.classifier->classes();

  SliceStore store(static_cast<std::size_t>(protocol.instances));
  parallel_for(static_cast<std::size_t>(protocol.instances), protocol.workers, [&](std::size_t i) {
    const auto index = static_cast<int64_t>(i);
    const TensorF x = test.image(index);
    const int label = test.labels[i];
    const int target = pick_target(protocol.target_rule, protocol.seed, index, label, classes);

    InstanceRecord rec;
    rec.index = index;
    rec.true_label = label;
    rec.target = target;
    rec.recovered_distortion = kNan;

    // Conservative convention: a clean input the defender already rejects
    // cannot yield a successful attack, and the attack is not run.
    Rng clean_rng(mix_seed(protocol.seed, static_cast<uint64_t>(index), kCleanCheckSalt));
    if (defend_classify(defender, x, clean_rng).detected) {
      rec.clean_rejected = true;
      rec.distortion = kNan;
      store.records[i] = rec;
      store_image(store.orig[i], x);
      store_image(store.adv[i], x);
      return;
    }

    AttackResult r = greybox_ensemble_attack(attacker, *defender.classifier, x, target,
                                             instance_attack_config(protocol, index));

    Rng submit_rng(mix_seed(protocol.seed, static_cast<uint64_t>(index), kSubmitSalt));
    DefendedVerdict verdict = defend_classify(defender, r.x_adv, submit_rng);
    rec.detected = verdict.detected;
    rec.detected_by = verdict.detector_index;
    rec.achieved_class = verdict.detected ? -1 : verdict.final_class;
    rec.success = !verdict.detected && verdict.final_class == target;
    rec.distortion = r.distortion;
    rec.c_used = r.c_used;
    rec.d_used = r.d_used;
    store.records[i] = rec;
    store_image(store.orig[i], x);
    store_image(store.adv[i], r.x_adv);
  });
  return assemble("greybox", protocol, test, std::move(store));
}

// ---- persistence ----

namespace {

json attack_to_json(const AttackConfig& a) {
  json j;
  j["iterations"] = a.iterations;
  j["lr"] = a.lr;
  j["kappa"] = a.kappa;
  j["binary_search_steps"] = a.binary_search_steps;
  j["c_lo"] = a.c_lo;
  j["c_hi"] = a.c_hi;
  j["d_lo"] = a.d_lo;
  j["d_hi"] = a.d_hi;
  j["optimizer"] = optimizer_name(a.optimizer);
  j["seed"] = a.seed;
  j["abort_early"] = a.abort_early;
  j["abort_check_every"] = a.abort_check_every;
  j["abort_tolerance"] = a.abort_tolerance;
  return j;
}

AttackConfig attack_from_json(const json& j) {
  AttackConfig a;
  a.iterations = j.at("iterations").get<int>();
  a.lr = j.at("lr").get<double>();
  a.kappa = j.at("kappa").get<double>();
  a.binary_search_steps = j.at("binary_search_steps").get<int>();
  a.c_lo = j.at("c_lo").get<double>();
  a.c_hi = j.at("c_hi").get<double>();
  a.d_lo = j.at("d_lo").get<double>();
  a.d_hi = j.at("d_hi").get<double>();
  a.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
  a.seed = j.at("seed").get<uint64_t>();
  a.abort_early = j.at("abort_early").get<bool>();
  a.abort_check_every = j.at("abort_check_every").get<int>();
  a.abort_tolerance = j.at("abort_tolerance").get<double>();
  return a;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_finite_or_null(const json& j) { return j.is_null() ? kNan : j.get<double>(); }

}  // namespace

void write_report_json(const EvalReport& report, const std::string& path) {
  json j;
  j["schema"] = "advkit.eval_report.v1";
  j["kind"] = report.protocol_kind;
  j["config_fingerprint"] = report.config_fingerprint;
  j["convention"] = report.convention;
  json proto;
  proto["instances"] = report.protocol.instances;
  proto["target_rule"] = target_rule_name(report.protocol.target_rule);
  proto["seed"] = report.protocol.seed;
  proto["attack"] = attack_to_json(report.protocol.attack);
  j["protocol"] = proto;
  json records = json::array();
  for (const InstanceRecord& r : report.records) {
    json rec;
    rec["index"] = r.index;
    rec["true_label"] = r.true_label;
    rec["target"] = r.target;
    rec["success"] = r.success;
    rec["clean_rejected"] = r.clean_rejected;
    rec["detected"] = r.detected;
    rec["detected_by"] = r.detected_by;
    rec["achieved_class"] = r.achieved_class;
    rec["distortion"] = finite_or_null(r.distortion);
    rec["recovered_distortion"] = finite_or_null(r.recovered_distortion);
    rec["c"] = r.c_used;
    rec["d"] = r.d_used;
    records.push_back(rec);
  }
  j["records"] = records;
  if (report.aggregates) {
    json agg;
    agg["instances"] = report.aggregates->instances;
    agg["successes"] = report.aggregates->successes;
    agg["success_rate"] = report.aggregates->success_rate;
    agg["mean_distortion"] = finite_or_null(report.aggregates->mean_distortion);
    agg["mean_recovered_distortion"] =
        finite_or_null(report.aggregates->mean_recovered_distortion);
    j["aggregates"] = agg;
  } else {
    j["aggregates"] = nullptr;
    j["aggregates_defined"] = false;
  }
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("write_report_json: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_report_json: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("read_report_json: '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("schema") || j.at("schema") != "advkit.eval_report.v1")
    throw Error("read_report_json: '" + path + "' is not an eval report");
  EvalReport report;
  report.protocol_kind = j.at("kind").get<std::string>();
  report.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  report.convention = j.at("convention").get<std::string>();
  const json& proto = j.at("protocol");
  report.protocol.instances = proto.at("instances").get<int64_t>();
  report.protocol.target_rule = target_rule_from_name(proto.at("target_rule").get<std::string>());
  report.protocol.seed = proto.at("seed").get<uint64_t>();
  report.protocol.attack = attack_from_json(proto.at("attack"));
  for (const json& rj : j.at("records")) {
    InstanceRecord r;
    r.index = rj.at("index").get<int64_t>();
    r.true_label = rj.at("true_label").get<int>();
    r.target = rj.at("target").get<int>();
    r.success = rj.at("success").get<bool>();
    r.clean_rejected = rj.at("clean_rejected").get<bool>();
    r.detected = rj.at("detected").get<bool>();
    r.detected_by = rj.at("detected_by").get<int>();
    r.achieved_class = rj.at("achieved_class").get<int>();
    r.distortion = from_finite_or_null(rj.at("distortion"));
    r.recovered_distortion = from_finite_or_null(rj.at("recovered_distortion"));
    r.c_used = rj.at("c").get<double>();
    r.d_used = rj.at("d").get<double>();
    report.records.push_back(r);
  }
  if (!report.records.empty()) report.aggregates = compute_metrics(report.records);
  return report;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_report_csv: cannot open '" + path + "'");
  out << "index,true_label,target,success,clean_rejected,detected,detected_by,"
         "achieved_class,distortion,recovered_distortion,c,d\n";
  char line[320];
  for (const InstanceRecord& r : report.records) {
    std::snprintf(line, sizeof line, "%lld,%d,%d,%d,%d,%d,%d,%d,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(r.index), r.true_label, r.target, r.success ? 1 : 0,
                  r.clean_rejected ? 1 : 0, r.detected ? 1 : 0, r.detected_by, r.achieved_class,
                  r.distortion, r.recovered_distortion, r.c_used, r.d_used);
    out << line;
  }
}

void write_image_blob(const std::string& path, const Shape& image_shape,
                      std::span<const float> data) {
  if (image_shape.size() != 3) throw Error("write_image_blob: image shape must be {H,W,C}");
  const int64_t px = shape_numel(image_shape);
  if (data.size() % static_cast<std::size_t>(px) != 0)
    throw Error("write_image_blob: data size not a multiple of the image size");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("write_image_blob: cannot open '" + path + "'");
  out.write("ADVI", 4);
  const uint32_t header[4] = {static_cast<uint32_t>(data.size() / px),
                              static_cast<uint32_t>(image_shape[0]),
                              static_cast<uint32_t>(image_shape[1]),
                              static_cast<uint32_t>(image_shape[2])};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
}

std::pair<Shape, std::vector<float>> read_image_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_image_blob: cannot open '" + path + "'");
  char magic[4];
  uint32_t header[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "ADVI", 4) != 0)
    throw Error("read_image_blob: '" + path + "' is not an image blob");
  if (!in.read(reinterpret_cast<char*>(header), sizeof header))
    throw Error("read_image_blob: truncated header");
  const Shape shape{header[1], header[2], header[3]};
  std::vector<float> data(static_cast<std::size_t>(header[0]) * shape_numel(shape));
  if (!in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(float))))
    throw Error("read_image_blob: truncated payload");
  return {shape, std::move(data)};
}

}  // namespace advkit

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "advkit/attacks.hpp"
#include "advkit/dataset.hpp"
#include "advkit/defenses.hpp"

namespace advkit {

enum class TargetRule {
  uniform_incorrect,  // uniform over the K-1 incorrect classes, seeded
  cycle_pairs,        // cycles through the incorrect classes per source class
};
const char* target_rule_name(TargetRule r);
TargetRule target_rule_from_name(const std::string& name);

struct EvalProtocol {
  int64_t instances = 100;  // attacked from the head of the test split
  TargetRule target_rule = TargetRule::uniform_incorrect;
  AttackConfig attack;
  uint64_t seed = 7;
  int workers = 1;
};

struct InstanceRecord {
  int64_t index = 0;
  int true_label = -1;
  int target = -1;
  bool success = false;
  bool clean_rejected = false;  // defender rejected the clean input; counted a failure
  bool detected = false;        // defender rejected the adversarial input
  int detected_by = -1;
  int achieved_class = -1;
  double distortion = 0.0;            // ||x'-x||, NaN when the attack was skipped
  double recovered_distortion = 0.0;  // ||G(x')-x||, NaN unless preprocessor eval
  double c_used = 0.0, d_used = 0.0;
};

struct Aggregates {
  int64_t instances = 0;
  int64_t successes = 0;
  double success_rate = 0.0;
  double mean_distortion = 0.0;            // over successful attacks only
  double mean_recovered_distortion = 0.0;  // preprocessor eval; NaN otherwise
};

// success rate = successes/instances; mean distortion over successful
// records. Empty input is an error (zero-instance runs skip aggregation).
Aggregates compute_metrics(std::span<const InstanceRecord> records);

struct EvalReport {
  std::string protocol_kind;  // "whitebox" | "greybox" | "preprocessor"
  std::string config_fingerprint;
  std::string convention =
      "mean distortion over successful attacks; clean-rejected instances count as failures";
  EvalProtocol protocol;
  std::vector<InstanceRecord> records;
  std::optional<Aggregates> aggregates;  // empty for zero-instance runs

  // Per-instance image dumps for figure emission (not serialized to JSON).
  Shape image_shape;
  std::vector<float> original_images;
  std::vector<float> adversarial_images;
  std::vector<float> recovered_images;  // preprocessor eval only
};

// Targeted attack on each of the first `instances` test inputs.
EvalReport run_whitebox_eval(const Classifier& model, const Dataset& test,
                             const EvalProtocol& protocol);

// Attack through the preprocessor; also records ||x'-x|| and ||G(x')-x||
// over successful attacks.
EvalReport run_preprocessor_eval(const Classifier& model, const Preprocessor& g,
                                 const Dataset& test, const EvalProtocol& protocol);

// Transfer protocol: optimize locally against the attacker's ensemble, then
// submit x' to the defender's pipeline once. Success means the defender does
// not reject x' and its (randomly chosen) reformer classifies it as the
// target. Instances whose clean input the defender already rejects are
// recorded as failures without running the attack.
EvalReport run_greybox_eval(const LocalEnsemble& attacker, const DefensePipeline& defender,
                            const Dataset& test, const EvalProtocol& protocol);

// Deterministic JSON / CSV persistence. Aggregates are recomputable from the
// per-instance array; images live in separate blob files.
void write_report_json(const EvalReport& report, const std::string& path);
EvalReport read_report_json(const std::string& path);
void write_report_csv(const EvalReport& report, const std::string& path);

// Raw image blob: "ADVI", u32 count,h,w,c, float32 data.
void write_image_blob(const std::string& path, const Shape& image_shape,
                      std::span<const float> data);
std::pair<Shape, std::vector<float>> read_image_blob(const std::string& path);

}  // namespace advkit

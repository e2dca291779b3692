#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advkit/defenses.hpp"
#include "advkit/models.hpp"
#include "advkit/training.hpp"

namespace advkit {

struct AttackConfig {
  int iterations = 1000;  // gradient steps per binary-search step
  double lr = 1e-2;
  double kappa = 0.0;  // confidence margin, logit units
  int binary_search_steps = 6;
  double c_lo = 1e-3, c_hi = 1e2;  // classifier-loss weight range
  double d_lo = 1e-3, d_hi = 1e2;  // detector-loss weight range (ensemble attack)
  OptimizerKind optimizer = OptimizerKind::adam;
  uint64_t seed = 1;  // reserved for per-instance derivation by callers
  // Stop an inner run once the objective stops improving between checks.
  bool abort_early = true;
  int abort_check_every = 50;
  double abort_tolerance = 1e-4;
  // When set, a per-attack CSV of outer_step,c,d,objective,best_distortion.
  std::string trace_path;

  void validate() const;
};

struct AttackResult {
  TensorF x_adv;  // {1,H,W,C}, elementwise in [0,1]
  bool success = false;
  // Class of x_adv under the first attacked view (the target when success).
  int achieved_class = -1;
  double distortion = 0.0;  // L2(x_adv - x), pixel units over [0,1]
  // Per local detector: score <= threshold at x_adv.
  std::vector<uint8_t> detector_evasion;
  double c_used = 0.0, d_used = 0.0;
  int64_t iterations_used = 0;
};

// max(max_{i != target} logits_i - logits_target, -kappa). Non-positive at
// kappa=0 exactly when the target logit dominates.
double cw_inner_loss(std::span<const float> logits, int target, double kappa);

// One-step sign attack: clamp(x + epsilon * sign(d CE/d x), 0, 1).
TensorF fgsm(const Classifier& model, const TensorF& x, int true_label, double epsilon);

// (adversarial, clean) pairs over the first `count` instances of data.
ImagePairs make_fgsm_pairs(const Classifier& model, const Dataset& data, int64_t count,
                           double epsilon);

// L2-minimal targeted attack: minimize ||x'-x||^2 + c * loss over x' in
// [0,1], with c bisected geometrically in [c_lo, c_hi] across
// binary_search_steps runs; returns the successful result with smallest
// distortion, else the last failed attempt flagged unsuccessful.
AttackResult cw_l2(const Classifier& model, const TensorF& x, int target,
                   const AttackConfig& cfg);

// Same objective through the preprocessor: the loss reads Z(G(x')) and
// success means C(G(x')) == target.
AttackResult cw_l2_through_preprocessor(const Classifier& model, const Preprocessor& g,
                                        const TensorF& x, int target, const AttackConfig& cfg);

// Attacker-side surrogate defense: reformer pool plus calibrated detectors.
struct LocalEnsemble {
  std::vector<std::shared_ptr<const Autoencoder>> reformers;
  std::vector<Detector> detectors;
};

// Ensemble transfer attack: minimize
//   ||x'-x||^2 + c * sum_j max(max_{i!=t} Z(R_j(x'))_i - Z(R_j(x'))_t, -kappa)
//             + d * sum_j max(D_j(x') - tau_j, 0).
// Local success requires every reformer to classify x' as the target and a
// zero detector loss. c bisects on classifier success; d doubles when the
// detector loss is still positive at the end of an inner run and halves
// otherwise, both clamped to their ranges. A detector with an infinite
// threshold is skipped (its loss term is identically zero).
AttackResult greybox_ensemble_attack(const LocalEnsemble& ensemble, const Classifier& model,
                                     const TensorF& x, int target, const AttackConfig& cfg);

}  // namespace advkit

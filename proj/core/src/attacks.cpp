#include "advkit/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace advkit {

void AttackConfig::validate() const {
  if (iterations < 1) throw Error("attack config: iterations must be >= 1");
  if (lr <= 0) throw Error("attack config: learning rate must be positive");
  if (kappa < 0) throw Error("attack config: kappa must be >= 0");
  if (binary_search_steps < 1) throw Error("attack config: binary search steps must be >= 1");
  if (!(c_lo > 0) || !(c_lo < c_hi)) throw Error("attack config: need 0 < c_lo < c_hi");
  if (!(d_lo > 0) || !(d_lo <= d_hi)) throw Error("attack config: need 0 < d_lo <= d_hi");
  if (abort_check_every < 1) throw Error("attack config: abort check interval must be >= 1");
}

double cw_inner_loss(std::span<const float> logits, int target, double kappa) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw Error("cw_inner_loss: target out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (static_cast<int>(i) != target) best_other = std::max(best_other, double(logits[i]));
  return std::max(best_other - double(logits[static_cast<std::size_t>(target)]), -kappa);
}

TensorF fgsm(const Classifier& model, const TensorF& x, int true_label, double epsilon) {
  if (epsilon < 0) throw Error("fgsm: epsilon must be >= 0");
  ContextF ctx;
  TensorF probe = x.clone();
  probe.set_requires_grad(true);
  const int labels[1] = {true_label};
  TensorF loss = cross_entropy(ctx, model.logits(ctx, probe), labels);
  ctx.backward(loss);

  TensorF out = x.clone();
  auto ov = out.values();
  const auto g = probe.grad();
  const auto eps = static_cast<float>(epsilon);
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const float s = g[i] > 0 ? 1.0f : (g[i] < 0 ? -1.0f : 0.0f);
    ov[i] = std::clamp(ov[i] + eps * s, 0.0f, 1.0f);
  }
  return out;
}

ImagePairs make_fgsm_pairs(const Classifier& model, const Dataset& data, int64_t count,
                           double epsilon) {
  if (count < 1 || count > data.count)
    throw Error("make_fgsm_pairs: count " + std::to_string(count) + " out of range");
  ImagePairs pairs;
  pairs.count = count;
  pairs.image_shape = data.image_shape;
  const int64_t px = data.pixels_per_image();
  pairs.adv.reserve(static_cast<std::size_t>(count * px));
  pairs.clean.assign(data.images.begin(), data.images.begin() + count * px);
  for (int64_t i = 0; i < count; ++i) {
    TensorF adv = fgsm(model, data.image(i), data.labels[static_cast<std::size_t>(i)], epsilon);
    pairs.adv.insert(pairs.adv.end(), adv.values().begin(), adv.values().end());
  }
  return pairs;
}

// ---- shared attack engine ----

namespace {

// One attacked view: the classifier reads this member's reconstruction of
// x'. Reconstruction-error detectors over the same autoencoder reuse it.
struct Member {
  enum class Kind { identity, autoencoder, preprocessor };
  Kind kind = Kind::identity;
  const Autoencoder* ae = nullptr;
  const Preprocessor* g = nullptr;
  struct AttachedDet {
    const Detector* det;
    std::size_t slot;
  };
  std::vector<AttachedDet> recon_detectors;
};

struct AttackProblem {
  const Classifier* classifier = nullptr;
  double kappa = 0.0;
  std::vector<Member> members;
  // Detectors evaluated through the generic differentiable score path
  // (jsd kind, or reconstruction detectors whose autoencoder is not a
  // member).
  std::vector<Member::AttachedDet> generic_detectors;
  std::size_t evasion_slots = 0;
};

struct TraceRow {
  int step;
  double c, d, objective, best_distortion;
};

void write_trace(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("attack trace: cannot open '" + path + "'");
  out << "outer_step,c,d,objective,best_distortion\n";
  char line[160];
  for (const TraceRow& r : rows) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.c, r.d, r.objective,
                  r.best_distortion);
    out << line;
  }
}

double l2_distortion(const TensorF& a, const TensorF& b) {
  double acc = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

AttackResult optimize_l2(const AttackProblem& problem, const TensorF& x, int target,
                         const AttackConfig& cfg) {
  cfg.validate();
  const int64_t classes = problem.classifier->classes();
  const auto member_count = static_cast<int64_t>(problem.members.size());
  if (target < 0 || target >= classes)
    throw Error("attack: target " + std::to_string(target) + " out of range for " +
                std::to_string(classes) + " classes");

  // Constants reused every iteration: a -1e9 offset that removes the target
  // column from the row max, and the target one-hot, both row-replicated.
  TensorF mask_rows({member_count, classes});
  TensorF onehot_rows({member_count, classes});
  for (int64_t j = 0; j < member_count; ++j) {
    mask_rows.values()[j * classes + target] = -1e9f;
    onehot_rows.values()[j * classes + target] = 1.0f;
  }

  AttackResult best;
  bool have_best = false;
  double best_distortion = std::numeric_limits<double>::infinity();

  double c_lo = cfg.c_lo, c_hi = cfg.c_hi;
  double c = std::sqrt(cfg.c_lo * cfg.c_hi);
  double d = std::sqrt(cfg.d_lo * cfg.d_hi);
  const bool any_detector =
      !problem.generic_detectors.empty() ||
      std::any_of(problem.members.begin(), problem.members.end(),
                  [](const Member& m) { return !m.recon_detectors.empty(); });

  AttackResult last;
  int64_t total_iterations = 0;
  std::vector<TraceRow> trace;
  bool exact_hit = false;  // distortion 0 cannot be improved
  std::vector<TensorF> recons(static_cast<std::size_t>(member_count));
  std::vector<uint8_t> evasion(problem.evasion_slots, 1);

  for (int step = 0; step < cfg.binary_search_steps && !exact_hit; ++step) {
    TensorF xadv = x.clone();
    auto opt = Optimizer::make(cfg.optimizer, cfg.lr);
    bool any_classified = false;
    double last_ld = 0.0;
    double last_objective = 0.0;
    double window_best = std::numeric_limits<double>::infinity();
    double prev_window_best = std::numeric_limits<double>::infinity();

    ContextF ctx;
    for (int it = 0; it < cfg.iterations; ++it) {
      ++total_iterations;
      xadv.set_requires_grad(true);
      xadv.zero_grad();

      TensorF dist = sum_squares(ctx, sub(ctx, xadv, x));

      for (std::size_t j = 0; j < problem.members.size(); ++j) {
        const Member& m = problem.members[j];
        switch (m.kind) {
          case Member::Kind::identity: recons[j] = xadv; break;
          case Member::Kind::autoencoder: recons[j] = m.ae->reconstruct(ctx, xadv); break;
          case Member::Kind::preprocessor: recons[j] = m.g->apply(ctx, xadv); break;
        }
      }
      TensorF z = problem.classifier->logits(ctx, concat0(ctx, std::span<const TensorF>(recons)));
      TensorF margins = sub(ctx, max_over_axis(ctx, add(ctx, z, mask_rows), 1),
                            sum_over_axis(ctx, mul(ctx, z, onehot_rows), 1));
      TensorF lc = sum(ctx, clamp(ctx, margins, -problem.kappa,
                                  std::numeric_limits<double>::infinity()));

      // Success readout: every member classifies x' as the target with the
      // full kappa logit margin (the margin is what transfers).
      bool all_classified = true;
      for (int64_t j = 0; j < member_count; ++j) {
        if (margins.values()[j] > -problem.kappa) {
          all_classified = false;
          break;
        }
        std::span<const float> row(z.values().data() + j * classes,
                                   static_cast<std::size_t>(classes));
        if (argmax_lowest(row) != target) {
          all_classified = false;
          break;
        }
      }

      TensorF ld;
      bool detectors_pass = true;
      auto apply_detector = [&](const Member::AttachedDet& ad, const TensorF& score) {
        TensorF over = relu(ctx, add_scalar(ctx, score, -ad.det->threshold));
        ld = ld.defined() ? add(ctx, ld, over) : over;
        const bool evaded = score.item() <= ad.det->threshold;
        evasion[ad.slot] = evaded ? 1 : 0;
        if (!evaded) detectors_pass = false;
      };
      for (std::size_t j = 0; j < problem.members.size(); ++j) {
        for (const auto& ad : problem.members[j].recon_detectors) {
          TensorF mse = scale(ctx, sum_squares(ctx, sub(ctx, xadv, recons[j])),
                              1.0 / static_cast<double>(xadv.numel()));
          apply_detector(ad, mse);
        }
      }
      for (const auto& ad : problem.generic_detectors)
        apply_detector(ad, detector_score_graph(ctx, *ad.det, xadv));

      TensorF objective = add(ctx, dist, scale(ctx, lc, c));
      if (ld.defined()) objective = add(ctx, objective, scale(ctx, ld, d));

      if (all_classified) any_classified = true;
      if (all_classified && detectors_pass) {
        const double dval = std::sqrt(dist.item());
        if (dval < best_distortion) {
          best_distortion = dval;
          best.x_adv = xadv.clone();
          best.success = true;
          best.achieved_class = target;
          best.distortion = dval;
          best.detector_evasion = evasion;
          best.c_used = c;
          best.d_used = d;
          have_best = true;
          if (dval == 0.0) {
            exact_hit = true;
            last_objective = objective.item();
            last_ld = ld.defined() ? ld.item() : 0.0;
            break;
          }
        }
      }

      last_objective = objective.item();
      last_ld = ld.defined() ? ld.item() : 0.0;

      ctx.backward(objective);
      TensorF params[1] = {xadv};
      opt->step(params);
      auto xv = xadv.values();
      for (auto& v : xv) v = std::clamp(v, 0.0f, 1.0f);

      if (cfg.abort_early) {
        window_best = std::min(window_best, last_objective);
        if ((it + 1) % cfg.abort_check_every == 0) {
          const double needed = cfg.abort_tolerance * std::max(1.0, std::abs(prev_window_best));
          if (prev_window_best - window_best <= needed &&
              prev_window_best != std::numeric_limits<double>::infinity())
            break;
          prev_window_best = window_best;
          window_best = std::numeric_limits<double>::infinity();
        }
      }
    }

    // Keep the final iterate as the reported attempt if nothing succeeds.
    last.x_adv = xadv.clone();
    last.success = false;
    last.c_used = c;
    last.d_used = d;

    trace.push_back({step, c, d, last_objective,
                     have_best ? best_distortion : std::numeric_limits<double>::quiet_NaN()});

    if (any_classified)
      c_hi = c;
    else
      c_lo = c;
    c = std::sqrt(c_lo * c_hi);
    if (any_detector) d = last_ld > 0 ? std::min(d * 2.0, cfg.d_hi) : std::max(d / 2.0, cfg.d_lo);
  }

  AttackResult result;
  if (have_best) {
    result = std::move(best);
  } else {
    result = std::move(last);
    // Report where the final attempt landed under the first attacked view.
    ContextF ictx = ContextF::inference();
    const Member& m0 = problem.members.front();
    TensorF view0 = m0.kind == Member::Kind::identity
                        ? result.x_adv
                        : (m0.kind == Member::Kind::autoencoder
                               ? m0.ae->reconstruct(ictx, result.x_adv)
                               : m0.g->apply(ictx, result.x_adv));
    TensorF z0 = problem.classifier->logits(ictx, view0);
    result.achieved_class = static_cast<int>(argmax_lowest(z0.values()));
    result.distortion = l2_distortion(result.x_adv, x);
    result.detector_evasion.assign(problem.evasion_slots, 1);
    for (const Member& m : problem.members)
      for (const auto& ad : m.recon_detectors)
        result.detector_evasion[ad.slot] =
            detector_score(*ad.det, result.x_adv) <= ad.det->threshold ? 1 : 0;
    for (const auto& ad : problem.generic_detectors)
      result.detector_evasion[ad.slot] =
          detector_score(*ad.det, result.x_adv) <= ad.det->threshold ? 1 : 0;
  }
  result.x_adv.set_requires_grad(false);
  result.iterations_used = total_iterations;
  if (!cfg.trace_path.empty()) write_trace(cfg.trace_path, trace);
  return result;
}

}  // namespace

AttackResult cw_l2(const Classifier& model, const TensorF& x, int target,
                   const AttackConfig& cfg) {
  AttackProblem problem;
  problem.classifier = &model;
  problem.kappa = cfg.kappa;
  problem.members.push_back(Member{});
  return optimize_l2(problem, x, target, cfg);
}

AttackResult cw_l2_through_preprocessor(const Classifier& model, const Preprocessor& g,
                                        const TensorF& x, int target, const AttackConfig& cfg) {
  AttackProblem problem;
  problem.classifier = &model;
  problem.kappa = cfg.kappa;
  Member m;
  m.kind = g.is_identity() ? Member::Kind::identity : Member::Kind::preprocessor;
  m.g = &g;
  problem.members.push_back(m);
  return optimize_l2(problem, x, target, cfg);
}

AttackResult greybox_ensemble_attack(const LocalEnsemble& ensemble, const Classifier& model,
                                     const TensorF& x, int target, const AttackConfig& cfg) {
  if (ensemble.reformers.empty())
    throw Error("greybox_ensemble_attack: ensemble needs at least one reformer");
  AttackProblem problem;
  problem.classifier = &model;
  problem.kappa = cfg.kappa;
  for (const auto& ae : ensemble.reformers) {
    if (!ae) throw Error("greybox_ensemble_attack: null reformer");
    Member m;
    m.kind = ae->is_identity() ? Member::Kind::identity : Member::Kind::autoencoder;
    m.ae = ae.get();
    problem.members.push_back(m);
  }
  problem.evasion_slots = ensemble.detectors.size();
  for (std::size_t i = 0; i < ensemble.detectors.size(); ++i) {
    const Detector& det = ensemble.detectors[i];
    // An infinite threshold can never fire; its loss term is identically
    // zero and is skipped outright.
    if (!std::isfinite(det.threshold)) continue;
    if (det.kind == DetectorKind::recon_error) {
      auto member = std::find_if(problem.members.begin(), problem.members.end(),
                                 [&](const Member& m) {
                                   return m.kind == Member::Kind::autoencoder &&
                                          m.ae == det.autoencoder.get();
                                 });
      if (member != problem.members.end()) {
        member->recon_detectors.push_back({&det, i});
        continue;
      }
    }
    problem.generic_detectors.push_back({&det, i});
  }
  return optimize_l2(problem, x, target, cfg);
}

}  // namespace advkit

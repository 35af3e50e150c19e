#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "descsel/core.hpp"
#include "descsel/io.hpp"

namespace descsel {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  // images with score > cutoff are predicted positive at this point
  double cutoff = 0.0;
};

/// Points ordered by descending cut-off, from (0,0) to (1,1).
struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  double accuracy() const noexcept {
    return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total());
  }
};

struct EvaluationReport {
  double accuracy = 0.0;
  double auc = 0.0;
  double cutoff = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t n_kept_positive = 0;
  std::size_t n_kept_negative = 0;
};

namespace detail {

inline void require_both_classes(const LabeledScoreList& scores) {
  const auto [pos, neg] = class_counts(scores);
  if (pos == 0 || neg == 0) throw ContractError("scores must contain both positive and negative labels");
}

/// Distinct scores ascending with per-value class counts.
struct ScoreGroup {
  double value;
  std::size_t pos;
  std::size_t neg;
};

inline std::vector<ScoreGroup> group_scores(const LabeledScoreList& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });
  std::vector<ScoreGroup> groups;
  for (auto i : order) {
    const auto& s = scores[i];
    if (groups.empty() || groups.back().value != s.score) groups.push_back({s.score, 0, 0});
    (s.label == Label::Positive ? groups.back().pos : groups.back().neg) += 1;
  }
  return groups;
}

inline double below(double v) {
  const double c = v - 1.0;
  return c < v ? c : std::nextafter(v, -std::numeric_limits<double>::infinity());
}

inline double above(double v) {
  const double c = v + 1.0;
  return c > v ? c : std::nextafter(v, std::numeric_limits<double>::infinity());
}

/// A value m with lo <= m < hi, so that `score > m` separates hi from lo.
inline double midpoint(double lo, double hi) {
  const double m = lo + (hi - lo) / 2.0;
  return (m >= hi || m < lo) ? lo : m;
}

}  // namespace detail

/// ROC curve and AUC. The AUC equals the Mann-Whitney statistic with ties
/// credited 0.5.
inline RocCurve roc_auc(const LabeledScoreList& scores) {
  validate_scores(scores);
  detail::require_both_classes(scores);
  const auto [n_pos, n_neg] = class_counts(scores);
  const auto groups = detail::group_scores(scores);

  RocCurve curve;
  curve.points.reserve(groups.size() + 1);
  curve.points.push_back({0.0, 0.0, groups.back().value});
  std::uint64_t tp = 0, fp = 0;
  // twice the number of concordant pairs, ties counting one
  std::uint64_t twice_wins = 0;
  for (std::size_t g = groups.size(); g-- > 0;) {
    twice_wins += 2 * groups[g].neg * tp + groups[g].neg * groups[g].pos;
    tp += groups[g].pos;
    fp += groups[g].neg;
    const double cutoff = g > 0 ? groups[g - 1].value : detail::below(groups.front().value);
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                            static_cast<double>(tp) / static_cast<double>(n_pos), cutoff});
  }
  curve.auc = static_cast<double>(twice_wins) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return curve;
}

/// Confusion counts under `score > cutoff -> +1`.
inline ConfusionCounts accuracy_at(const LabeledScoreList& scores, double cutoff) {
  ConfusionCounts c;
  for (const auto& s : scores) {
    const bool predicted_positive = s.score > cutoff;
    if (s.label == Label::Positive) {
      (predicted_positive ? c.tp : c.fn) += 1;
    } else {
      (predicted_positive ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

/// Youden's J = TPR - FPR, evaluated from an exact integer numerator so
/// that equal J values compare equal.
struct YoudenIndex {
  double operator()(const ConfusionCounts& c) const noexcept {
    const auto p = static_cast<std::int64_t>(c.tp + c.fn);
    const auto n = static_cast<std::int64_t>(c.fp + c.tn);
    const auto num = static_cast<std::int64_t>(c.tp) * n - static_cast<std::int64_t>(c.fp) * p;
    return static_cast<double>(num) / (static_cast<double>(p) * static_cast<double>(n));
  }
};

struct CutoffChoice {
  double cutoff = 0.0;
  double criterion = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

/// Candidate cut-offs in ascending order: one below the minimum, the
/// midpoints between consecutive distinct scores, one above the maximum.
inline std::vector<double> cutoff_candidates(const LabeledScoreList& scores) {
  const auto groups = detail::group_scores(scores);
  std::vector<double> out;
  if (groups.empty()) return out;
  out.push_back(detail::below(groups.front().value));
  for (std::size_t g = 0; g + 1 < groups.size(); ++g) {
    out.push_back(detail::midpoint(groups[g].value, groups[g + 1].value));
  }
  out.push_back(detail::above(groups.back().value));
  return out;
}

/// Picks the candidate cut-off maximizing `criterion` (Youden's J by
/// default). Ties go to the higher TPR, then to the smaller cut-off.
template <typename Criterion = YoudenIndex>
CutoffChoice calibrate_cutoff_detailed(const LabeledScoreList& scores, Criterion criterion = {}) {
  validate_scores(scores);
  detail::require_both_classes(scores);
  const auto [n_pos, n_neg] = class_counts(scores);
  const auto groups = detail::group_scores(scores);
  const auto candidates = cutoff_candidates(scores);

  CutoffChoice best;
  bool have = false;
  // candidate k predicts positive for groups k.. (everything above it)
  ConfusionCounts c{n_pos, n_neg, 0, 0};
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (k > 0) {
      const auto& g = groups[k - 1];
      c.tp -= g.pos;
      c.fn += g.pos;
      c.fp -= g.neg;
      c.tn += g.neg;
    }
    const double value = criterion(c);
    const double tpr = static_cast<double>(c.tp) / static_cast<double>(n_pos);
    if (!have || value > best.criterion || (value == best.criterion && tpr > best.tpr)) {
      best = {candidates[k], value, tpr, static_cast<double>(c.fp) / static_cast<double>(n_neg)};
      have = true;
    }
  }
  return best;
}

template <typename Criterion = YoudenIndex>
double calibrate_cutoff(const LabeledScoreList& scores, Criterion criterion = {}) {
  return calibrate_cutoff_detailed(scores, criterion).cutoff;
}

inline EvaluationReport evaluate(const LabeledScoreList& scores, double cutoff, std::size_t n_kept_positive = 0,
                                 std::size_t n_kept_negative = 0) {
  const auto roc = roc_auc(scores);
  const auto c = accuracy_at(scores, cutoff);
  EvaluationReport r;
  r.accuracy = c.accuracy();
  r.auc = roc.auc;
  r.cutoff = cutoff;
  r.tp = c.tp;
  r.fp = c.fp;
  r.tn = c.tn;
  r.fn = c.fn;
  r.n_kept_positive = n_kept_positive;
  r.n_kept_negative = n_kept_negative;
  return r;
}

/// Average (mid) ranks, 1-based.
inline std::vector<double> mid_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ContractError("spearman: length mismatch");
  if (xs.size() < 3) throw ContractError("spearman: at least 3 pairs required");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw ContractError("spearman: non-finite input");
  }
  const auto rx = mid_ranks(xs);
  const auto ry = mid_ranks(ys);
  // mean rank is (n+1)/2 regardless of ties
  const double mean = (static_cast<double>(xs.size()) + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedStatistic("spearman: zero rank variance");
  return sxy / std::sqrt(sxx * syy);
}

enum class IccModel {
  TwoWayRandomAbsolute,   // ICC(2,1)
  TwoWayMixedConsistency  // ICC(3,1)
};

inline std::string_view to_string(IccModel m) noexcept {
  return m == IccModel::TwoWayRandomAbsolute ? "2,1" : "3,1";
}

inline IccModel parse_icc_model(std::string_view s) {
  if (s == "2,1" || s == "icc21") return IccModel::TwoWayRandomAbsolute;
  if (s == "3,1" || s == "icc31") return IccModel::TwoWayMixedConsistency;
  throw ParseError("unknown ICC variant '" + std::string(s) + "'");
}

struct IccComponents {
  double msr = 0.0;  // between images
  double msc = 0.0;  // between runs
  double mse = 0.0;  // residual
};

/// Mean squares of the two-way layout. `by_run[r][i]` is the score of image
/// i in run r.
inline IccComponents icc_mean_squares(const std::vector<std::vector<double>>& by_run) {
  const std::size_t k = by_run.size();
  if (k < 2) throw ContractError("icc: at least 2 runs required");
  const std::size_t n = by_run.front().size();
  if (n < 2) throw ContractError("icc: at least 2 images required");
  double grand = 0.0;
  for (const auto& run : by_run) {
    if (run.size() != n) throw ContractError("icc: runs differ in image count");
    for (double v : run) {
      if (!std::isfinite(v)) throw ContractError("icc: non-finite score");
      grand += v;
    }
  }
  grand /= static_cast<double>(k * n);

  std::vector<double> image_mean(n, 0.0);
  std::vector<double> run_mean(k, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = by_run[r][i] - grand;
      image_mean[i] += v;
      run_mean[r] += v;
    }
  }
  for (auto& m : image_mean) m /= static_cast<double>(k);
  for (auto& m : run_mean) m /= static_cast<double>(n);

  double ss_rows = 0.0, ss_cols = 0.0, ss_err = 0.0, ss_total = 0.0;
  for (double m : image_mean) ss_rows += m * m;
  for (double m : run_mean) ss_cols += m * m;
  ss_rows *= static_cast<double>(k);
  ss_cols *= static_cast<double>(n);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = by_run[r][i] - grand;
      const double e = v - image_mean[i] - run_mean[r];
      ss_err += e * e;
      ss_total += v * v;
    }
  }
  if (ss_total == 0.0) throw UndefinedStatistic("icc: zero total variance");
  const double dk = static_cast<double>(k);
  const double dn = static_cast<double>(n);
  return {ss_rows / (dn - 1.0), ss_cols / (dk - 1.0), ss_err / ((dn - 1.0) * (dk - 1.0))};
}

/// Intraclass correlation of scores across runs (raters) over images
/// (subjects). Default ICC(2,1): two-way random effects, absolute agreement,
/// single measurement.
inline double icc(const std::vector<std::vector<double>>& by_run, IccModel model = IccModel::TwoWayRandomAbsolute) {
  const auto ms = icc_mean_squares(by_run);
  const double k = static_cast<double>(by_run.size());
  const double n = static_cast<double>(by_run.front().size());
  double den = ms.msr + (k - 1.0) * ms.mse;
  if (model == IccModel::TwoWayRandomAbsolute) den += (k / n) * (ms.msc - ms.mse);
  if (den == 0.0) throw UndefinedStatistic("icc: zero denominator");
  return (ms.msr - ms.mse) / den;
}

/// Per-image mean score across runs, in the image order of the first run.
inline LabeledScoreList ensemble_scores(const std::vector<LabeledScoreList>& runs) {
  if (runs.empty()) throw ContractError("ensemble: no runs");
  const auto& first = runs.front();
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (!pos.emplace(first[i].image_id, i).second) {
      throw ContractError("ensemble: duplicate image_id '" + first[i].image_id + "'");
    }
  }
  std::vector<double> sums(first.size(), 0.0);
  for (const auto& run : runs) {
    if (run.size() != first.size()) throw ContractError("ensemble: runs cover different images");
    std::vector<bool> seen(first.size(), false);
    for (const auto& s : run) {
      const auto it = pos.find(s.image_id);
      if (it == pos.end()) throw ContractError("ensemble: image '" + s.image_id + "' missing from first run");
      if (seen[it->second]) throw ContractError("ensemble: duplicate image_id '" + s.image_id + "'");
      if (first[it->second].label != s.label) throw ContractError("ensemble: label mismatch for '" + s.image_id + "'");
      seen[it->second] = true;
      sums[it->second] += s.score;
    }
  }
  LabeledScoreList out = first;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].score = sums[i] / static_cast<double>(runs.size());
  return out;
}

inline nlohmann::ordered_json report_to_json(const EvaluationReport& r) {
  return {{"accuracy", r.accuracy},
          {"auc", r.auc},
          {"cutoff", r.cutoff},
          {"tp", r.tp},
          {"fp", r.fp},
          {"tn", r.tn},
          {"fn", r.fn},
          {"n_kept_positive", r.n_kept_positive},
          {"n_kept_negative", r.n_kept_negative}};
}

/// Header `fpr,tpr,cutoff`.
inline std::string format_roc_csv(const RocCurve& curve) {
  std::string out = "fpr,tpr,cutoff\n";
  for (const auto& p : curve.points) {
    out += detail::format_double(p.fpr) + "," + detail::format_double(p.tpr) + "," +
           detail::format_double(p.cutoff) + "\n";
  }
  return out;
}

}  // namespace descsel

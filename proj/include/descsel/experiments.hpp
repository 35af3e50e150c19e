#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "descsel/core.hpp"
#include "descsel/io.hpp"
#include "descsel/metrics.hpp"
#include "descsel/scoring.hpp"

namespace descsel {

enum class Sampling { WithReplacement, WithoutReplacement };

inline std::string_view to_string(Sampling s) noexcept {
  return s == Sampling::WithReplacement ? "with_replacement" : "without_replacement";
}

inline Sampling parse_sampling(std::string_view s) {
  if (s == "with_replacement") return Sampling::WithReplacement;
  if (s == "without_replacement") return Sampling::WithoutReplacement;
  throw ParseError("unknown sampling mode '" + std::string(s) + "'");
}

struct NShotConfig {
  std::vector<int> n_values;
  int runs_per_n = 100;
  Sampling sampling = Sampling::WithoutReplacement;
  std::uint64_t base_seed = 0;
  SelectionOptions selection;
  // worker threads; results do not depend on this
  unsigned threads = 1;
};

/// One sampled run: n positive + n negative training images.
struct NShotRun {
  int n = 0;
  int run = 0;
  double accuracy = 0.0;
  double auc = 0.0;
  double cutoff = 0.0;
  std::size_t kept_positive = 0;
  std::size_t kept_negative = 0;
};

struct NShotCurvePoint {
  int n = 0;
  int runs = 0;
  double mean_accuracy = 0.0;
  double mean_auc = 0.0;
  double mean_kept_positive = 0.0;
  double mean_kept_negative = 0.0;
};

struct NShotResult {
  std::vector<NShotCurvePoint> curve;
  std::vector<NShotRun> runs;  // grouped by n, then run index
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of one run, independent of execution order.
inline std::uint64_t run_seed(std::uint64_t base_seed, int n, int run) noexcept {
  const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(n)) << 32) |
                   static_cast<std::uint32_t>(run);
  return splitmix64(base_seed ^ splitmix64(key));
}

namespace detail {

inline std::vector<std::size_t> sample_indices(std::span<const std::size_t> pool, int n, Sampling mode,
                                               std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(n));
  if (mode == Sampling::WithReplacement) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int k = 0; k < n; ++k) out.push_back(pool[pick(rng)]);
    return out;
  }
  std::vector<std::size_t> work(pool.begin(), pool.end());
  for (int k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), work.size() - 1);
    std::swap(work[static_cast<std::size_t>(k)], work[pick(rng)]);
    out.push_back(work[static_cast<std::size_t>(k)]);
  }
  return out;
}

/// Runs `task(i)` for i in [0, count) on up to `threads` workers and
/// rethrows the exception of the lowest failing index.
template <typename Task>
void parallel_for(std::size_t count, unsigned threads, Task&& task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n_workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_class(
    const SimilarityMatrix& m, std::span<const std::size_t> indices) {
  std::vector<std::size_t> pos, neg;
  for (auto i : indices) {
    if (i >= m.rows()) throw ContractError("image index out of range");
    (m.labels()[i] == Label::Positive ? pos : neg).push_back(i);
  }
  return {pos, neg};
}

}  // namespace detail

/// Zero-shot evaluation: plain class scores over the full descriptor sets.
inline EvaluationReport evaluate_zero_shot(const SimilarityMatrix& m, std::span<const std::size_t> images,
                                           double cutoff = 0.0) {
  const auto scores = score_images(m, images, ZeroShot{});
  return evaluate(scores, cutoff, m.columns_of(Label::Positive).size(), m.columns_of(Label::Negative).size());
}

/// Descriptor selection on `training`, cut-off calibrated on the same
/// training images, metrics on `test`.
inline NShotRun evaluate_selection_run(const SimilarityMatrix& m, std::span<const std::size_t> training,
                                       std::span<const std::size_t> test, const SelectionOptions& opts) {
  const ScoringMode mode = WeightedSelected{descriptor_scores(m, training, opts)};
  const auto& sel = std::get<WeightedSelected>(mode).selection;
  const double cutoff = calibrate_cutoff(score_images(m, training, mode));
  const auto report = evaluate(score_images(m, test, mode), cutoff);
  NShotRun r;
  r.accuracy = report.accuracy;
  r.auc = report.auc;
  r.cutoff = cutoff;
  r.kept_positive = sel.kept_positive.size();
  r.kept_negative = sel.kept_negative.size();
  return r;
}

/// n-shot descriptor-selection experiment: for every n and run, samples n
/// positive and n negative training images, selects descriptors, calibrates
/// the cut-off on the sample and evaluates weighted scoring on `test`.
inline NShotResult run_nshot(const SimilarityMatrix& m, std::span<const std::size_t> train,
                             std::span<const std::size_t> test, const NShotConfig& cfg) {
  if (cfg.runs_per_n < 1) throw ContractError("runs_per_n must be at least 1");
  if (cfg.n_values.empty()) throw ContractError("no n values given");
  {
    std::unordered_set<std::size_t> train_set(train.begin(), train.end());
    for (auto i : test) {
      if (train_set.count(i) != 0) throw ContractError("train and test splits overlap at '" + m.image_ids().at(i) + "'");
    }
  }
  const auto [train_pos, train_neg] = detail::split_by_class(m, train);
  const auto [test_pos, test_neg] = detail::split_by_class(m, test);
  if (train_pos.empty() || train_neg.empty()) throw ContractError("training split must contain both classes");
  if (test_pos.empty() || test_neg.empty()) throw ContractError("test split must contain both classes");
  for (int n : cfg.n_values) {
    if (n < 1) throw ContractError("n must be positive");
    if (cfg.sampling == Sampling::WithoutReplacement &&
        static_cast<std::size_t>(n) > std::min(train_pos.size(), train_neg.size())) {
      throw ContractError("n = " + std::to_string(n) + " exceeds the smaller training class (" +
                          std::to_string(std::min(train_pos.size(), train_neg.size())) +
                          ") for sampling without replacement");
    }
  }

  const auto runs = static_cast<std::size_t>(cfg.runs_per_n);
  NShotResult result;
  result.runs.resize(cfg.n_values.size() * runs);
  detail::parallel_for(result.runs.size(), cfg.threads, [&](std::size_t task) {
    const int n = cfg.n_values[task / runs];
    const int run = static_cast<int>(task % runs);
    std::mt19937_64 rng(run_seed(cfg.base_seed, n, run));
    auto training = detail::sample_indices(train_pos, n, cfg.sampling, rng);
    const auto neg = detail::sample_indices(train_neg, n, cfg.sampling, rng);
    training.insert(training.end(), neg.begin(), neg.end());
    auto r = evaluate_selection_run(m, training, test, cfg.selection);
    r.n = n;
    r.run = run;
    result.runs[task] = r;
  });

  for (std::size_t k = 0; k < cfg.n_values.size(); ++k) {
    NShotCurvePoint p;
    p.n = cfg.n_values[k];
    p.runs = cfg.runs_per_n;
    for (std::size_t r = 0; r < runs; ++r) {
      const auto& run = result.runs[k * runs + r];
      p.mean_accuracy += run.accuracy;
      p.mean_auc += run.auc;
      p.mean_kept_positive += static_cast<double>(run.kept_positive);
      p.mean_kept_negative += static_cast<double>(run.kept_negative);
    }
    const auto d = static_cast<double>(runs);
    p.mean_accuracy /= d;
    p.mean_auc /= d;
    p.mean_kept_positive /= d;
    p.mean_kept_negative /= d;
    result.curve.push_back(p);
  }
  return result;
}

/// Occurrence counts of normalized descriptor texts for one class.
struct ClassFrequencies {
  Label class_label = Label::Positive;
  std::string class_name;
  double mean_set_size = 0.0;
  std::vector<std::pair<std::string, std::size_t>> counts;  // count desc, then text asc
};

/// Counts in how many generation runs each normalized descriptor appears,
/// per class. `runs[r]` holds the descriptor sets of run r.
inline std::vector<ClassFrequencies> count_descriptor_frequencies(
    const std::vector<std::vector<DescriptorSet>>& runs) {
  std::vector<ClassFrequencies> out;
  for (Label c : {Label::Positive, Label::Negative}) {
    std::map<std::string, std::size_t> counts;
    std::set<std::string> names;
    std::size_t total_size = 0;
    std::size_t sets_with_class = 0;
    for (const auto& run : runs) {
      std::set<std::string> in_run;
      bool has_class = false;
      for (const auto& set : run) {
        if (set.class_label != c) continue;
        has_class = true;
        if (!set.class_name.empty()) names.insert(set.class_name);
        for (const auto& d : set.descriptors) {
          if (in_run.insert(normalize_descriptor(d)).second) ++total_size;
        }
      }
      sets_with_class += has_class ? 1 : 0;
      for (const auto& d : in_run) ++counts[d];
    }
    if (sets_with_class == 0) continue;
    ClassFrequencies f;
    f.class_label = c;
    for (const auto& name : names) f.class_name += (f.class_name.empty() ? "" : "|") + name;
    f.mean_set_size = static_cast<double>(total_size) / static_cast<double>(sets_with_class);
    f.counts.assign(counts.begin(), counts.end());
    std::stable_sort(f.counts.begin(), f.counts.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    out.push_back(std::move(f));
  }
  return out;
}

/// Descriptor sets implied by the column texts of a matrix.
inline std::vector<DescriptorSet> descriptor_sets_from_matrix(const SimilarityMatrix& m) {
  std::vector<DescriptorSet> sets;
  for (Label c : {Label::Positive, Label::Negative}) {
    DescriptorSet s;
    s.class_label = c;
    for (auto j : m.columns_of(c)) s.descriptors.push_back(m.keys()[j].text);
    if (!s.descriptors.empty()) sets.push_back(std::move(s));
  }
  return sets;
}

struct VariabilityReport {
  std::vector<double> per_set_auc;
  double mean_auc = 0.0;
  double min_auc = 0.0;
  double max_auc = 0.0;
  double ensemble_auc = 0.0;
  double icc = 0.0;
  IccModel icc_model = IccModel::TwoWayRandomAbsolute;
  std::vector<ClassFrequencies> descriptor_frequencies;
};

/// Zero-shot variability across descriptor-set generation runs: one matrix
/// per run over the same images. When `descriptor_sets` is empty the sets
/// are taken from the matrix column texts.
inline VariabilityReport run_variability(const std::vector<SimilarityMatrix>& matrices,
                                         const std::vector<std::vector<DescriptorSet>>& descriptor_sets = {},
                                         IccModel model = IccModel::TwoWayRandomAbsolute) {
  if (matrices.empty()) throw ContractError("variability: no matrices");
  if (!descriptor_sets.empty() && descriptor_sets.size() != matrices.size()) {
    throw ContractError("variability: one descriptor-set list per matrix required");
  }
  const auto& ref = matrices.front();
  std::vector<LabeledScoreList> runs;
  std::vector<std::vector<double>> by_run;
  VariabilityReport rep;
  rep.icc_model = model;
  for (std::size_t r = 0; r < matrices.size(); ++r) {
    const auto& m = matrices[r];
    if (m.rows() != ref.rows()) throw ContractError("variability: matrix " + std::to_string(r) + " has a different image count");
    LabeledScoreList aligned;
    aligned.reserve(ref.rows());
    for (std::size_t i = 0; i < ref.rows(); ++i) {
      const auto& id = ref.image_ids()[i];
      std::size_t row = 0;
      try {
        row = m.index_of(id);
      } catch (const ContractError&) {
        throw ContractError("variability: image '" + id + "' missing from matrix " + std::to_string(r));
      }
      if (m.labels()[row] != ref.labels()[i]) {
        throw ContractError("variability: label mismatch for '" + id + "' in matrix " + std::to_string(r));
      }
      aligned.push_back({id, ref.labels()[i], classification_score(m, row, ZeroShot{})});
    }
    rep.per_set_auc.push_back(roc_auc(aligned).auc);
    std::vector<double> scores;
    scores.reserve(aligned.size());
    for (const auto& s : aligned) scores.push_back(s.score);
    by_run.push_back(std::move(scores));
    runs.push_back(std::move(aligned));
  }
  double sum = 0.0;
  for (double a : rep.per_set_auc) sum += a;
  rep.mean_auc = sum / static_cast<double>(rep.per_set_auc.size());
  rep.min_auc = *std::min_element(rep.per_set_auc.begin(), rep.per_set_auc.end());
  rep.max_auc = *std::max_element(rep.per_set_auc.begin(), rep.per_set_auc.end());
  rep.ensemble_auc = roc_auc(ensemble_scores(runs)).auc;
  rep.icc = icc(by_run, model);

  if (descriptor_sets.empty()) {
    std::vector<std::vector<DescriptorSet>> derived;
    for (const auto& m : matrices) derived.push_back(descriptor_sets_from_matrix(m));
    rep.descriptor_frequencies = count_descriptor_frequencies(derived);
  } else {
    rep.descriptor_frequencies = count_descriptor_frequencies(descriptor_sets);
  }
  return rep;
}

/// All similarity columns per image, positive-class block first, as a
/// matrix in the standard CSV layout.
inline SimilarityMatrix export_feature_vectors(const SimilarityMatrix& m) {
  std::vector<std::size_t> order = m.columns_of(Label::Positive);
  const auto neg = m.columns_of(Label::Negative);
  order.insert(order.end(), neg.begin(), neg.end());
  std::vector<DescriptorKey> keys;
  for (auto j : order) keys.push_back(m.keys()[j]);
  std::vector<double> values;
  values.reserve(m.values().size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (auto j : order) values.push_back(m.at(i, j));
  }
  return SimilarityMatrix(m.image_ids(), m.labels(), std::move(keys), std::move(values));
}

inline nlohmann::ordered_json nshot_to_json(const NShotResult& res, const NShotConfig& cfg) {
  nlohmann::ordered_json doc;
  doc["config"] = {{"n_values", cfg.n_values},
                   {"runs_per_n", cfg.runs_per_n},
                   {"sampling", to_string(cfg.sampling)},
                   {"base_seed", cfg.base_seed},
                   {"sign_convention", to_string(cfg.selection.convention)},
                   {"empty_class_fallback", cfg.selection.empty_class_fallback}};
  auto curve = nlohmann::ordered_json::array();
  for (const auto& p : res.curve) {
    curve.push_back({{"n", p.n},
                     {"runs", p.runs},
                     {"mean_accuracy", p.mean_accuracy},
                     {"mean_auc", p.mean_auc},
                     {"mean_kept_positive", p.mean_kept_positive},
                     {"mean_kept_negative", p.mean_kept_negative}});
  }
  doc["curve"] = std::move(curve);
  auto runs = nlohmann::ordered_json::array();
  for (const auto& r : res.runs) {
    runs.push_back({{"n", r.n},
                    {"run", r.run},
                    {"accuracy", r.accuracy},
                    {"auc", r.auc},
                    {"cutoff", r.cutoff},
                    {"kept_positive", r.kept_positive},
                    {"kept_negative", r.kept_negative}});
  }
  doc["runs"] = std::move(runs);
  return doc;
}

/// Header `n,mean_accuracy,mean_auc,mean_kept_positive,mean_kept_negative`.
inline std::string format_nshot_curve_csv(const NShotResult& res) {
  std::string out = "n,mean_accuracy,mean_auc,mean_kept_positive,mean_kept_negative\n";
  for (const auto& p : res.curve) {
    out += std::to_string(p.n) + "," + detail::format_double(p.mean_accuracy) + "," +
           detail::format_double(p.mean_auc) + "," + detail::format_double(p.mean_kept_positive) + "," +
           detail::format_double(p.mean_kept_negative) + "\n";
  }
  return out;
}

inline nlohmann::ordered_json variability_to_json(const VariabilityReport& rep) {
  nlohmann::ordered_json doc;
  doc["n_sets"] = rep.per_set_auc.size();
  doc["per_set_auc"] = rep.per_set_auc;
  doc["mean_auc"] = rep.mean_auc;
  doc["min_auc"] = rep.min_auc;
  doc["max_auc"] = rep.max_auc;
  doc["ensemble_auc"] = rep.ensemble_auc;
  doc["icc"] = rep.icc;
  doc["icc_model"] = to_string(rep.icc_model);
  auto freqs = nlohmann::ordered_json::array();
  for (const auto& f : rep.descriptor_frequencies) {
    auto counts = nlohmann::ordered_json::array();
    for (const auto& [text, count] : f.counts) counts.push_back({{"descriptor", text}, {"count", count}});
    freqs.push_back({{"class_label", to_int(f.class_label)},
                     {"class_name", f.class_name},
                     {"mean_set_size", f.mean_set_size},
                     {"counts", std::move(counts)}});
  }
  doc["descriptor_frequencies"] = std::move(freqs);
  return doc;
}

}  // namespace descsel

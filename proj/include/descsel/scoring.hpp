#pragma once

#include <algorithm>
#include <cstddef>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "descsel/core.hpp"

namespace descsel {

/// How the image label multiplies phi in the descriptor score.
///   AsPrinted: r(d) = mean_i(c_i * phi(d, x_i)) for descriptors of both classes.
///   PerClass:  r(d_c) = c * mean_i(c_i * phi(d_c, x_i)), so a descriptor scores
///              positive when it is larger on images of its own class.
enum class SignConvention { PerClass, AsPrinted };

inline std::string_view to_string(SignConvention s) noexcept {
  return s == SignConvention::PerClass ? "per_class" : "as_printed";
}

inline SignConvention parse_sign_convention(std::string_view s) {
  if (s == "per_class") return SignConvention::PerClass;
  if (s == "as_printed") return SignConvention::AsPrinted;
  throw ParseError("unknown sign convention '" + std::string(s) + "'");
}

struct DescriptorScore {
  std::size_t column = 0;
  DescriptorKey key;
  double r = 0.0;
  bool kept = false;
};

/// Per-descriptor scores r(d) and the pruned descriptor sets D'(c).
struct SelectionResult {
  std::vector<DescriptorScore> per_descriptor;  // matrix column order
  std::vector<std::size_t> kept_positive;       // matrix columns
  std::vector<std::size_t> kept_negative;
  // set when every descriptor of the class scored negative and the best one
  // was kept anyway
  bool fallback_positive = false;
  bool fallback_negative = false;
  // training sample had unequal class counts
  bool imbalanced = false;
  SignConvention convention = SignConvention::PerClass;
  std::size_t n_training = 0;

  const std::vector<std::size_t>& kept(Label c) const noexcept {
    return c == Label::Positive ? kept_positive : kept_negative;
  }
};

struct SelectionOptions {
  SignConvention convention = SignConvention::PerClass;
  bool empty_class_fallback = true;
};

namespace detail {

inline void require_class_columns(const SimilarityMatrix& m, Label c) {
  for (const auto& k : m.keys()) {
    if (k.class_label == c) return;
  }
  throw ContractError("no descriptor columns for class " + std::string(label_token(c)));
}

/// Fills kept flags and kept lists from r, applying the empty-class fallback.
inline void finalize_selection(SelectionResult& sel, bool fallback) {
  sel.kept_positive.clear();
  sel.kept_negative.clear();
  sel.fallback_positive = sel.fallback_negative = false;
  for (auto& d : sel.per_descriptor) d.kept = d.r >= 0.0;
  for (Label c : {Label::Positive, Label::Negative}) {
    DescriptorScore* best = nullptr;
    bool any_kept = false;
    for (auto& d : sel.per_descriptor) {
      if (d.key.class_label != c) continue;
      any_kept = any_kept || d.kept;
      if (best == nullptr || d.r > best->r) best = &d;
    }
    if (!any_kept && best != nullptr && fallback) {
      best->kept = true;
      (c == Label::Positive ? sel.fallback_positive : sel.fallback_negative) = true;
    }
  }
  for (const auto& d : sel.per_descriptor) {
    if (d.kept) (d.key.class_label == Label::Positive ? sel.kept_positive : sel.kept_negative).push_back(d.column);
  }
}

}  // namespace detail

/// Mean of phi(d, x) over every descriptor column of class `c`.
inline double class_score(const SimilarityMatrix& m, std::size_t image, Label c) {
  if (image >= m.rows()) throw ContractError("image index out of range");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    if (m.keys()[j].class_label != c) continue;
    sum += m.at(image, j);
    ++count;
  }
  if (count == 0) throw ContractError("no descriptor columns for class " + std::string(label_token(c)));
  return sum / static_cast<double>(count);
}

/// Scores every descriptor on the training images and prunes those with r < 0.
/// Indices may repeat (sampling with replacement); each occurrence counts.
inline SelectionResult descriptor_scores(const SimilarityMatrix& m, std::span<const std::size_t> training,
                                         const SelectionOptions& opts = {}) {
  if (training.empty()) throw ContractError("empty training set");
  std::size_t n_pos = 0;
  for (auto i : training) {
    if (i >= m.rows()) throw ContractError("training index out of range");
    n_pos += m.labels()[i] == Label::Positive ? 1 : 0;
  }
  const std::size_t n_neg = training.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("training set must contain both classes");
  detail::require_class_columns(m, Label::Positive);
  detail::require_class_columns(m, Label::Negative);

  SelectionResult sel;
  sel.convention = opts.convention;
  sel.n_training = training.size();
  sel.imbalanced = n_pos != n_neg;
  sel.per_descriptor.reserve(m.cols());
  // summing in index order makes r depend only on the multiset of images
  std::vector<std::size_t> ordered(training.begin(), training.end());
  std::sort(ordered.begin(), ordered.end());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double acc = 0.0;
    for (auto i : ordered) acc += to_int(m.labels()[i]) * m.at(i, j);
    double r = acc / static_cast<double>(training.size());
    if (opts.convention == SignConvention::PerClass && m.keys()[j].class_label == Label::Negative) r = -r;
    sel.per_descriptor.push_back({j, m.keys()[j], r, false});
  }
  detail::finalize_selection(sel, opts.empty_class_fallback);
  return sel;
}

/// Builds a selection from externally supplied weights (one per column),
/// with the same pruning and fallback rules as descriptor_scores.
inline SelectionResult selection_from_weights(const SimilarityMatrix& m, std::span<const double> weights,
                                              const SelectionOptions& opts = {}) {
  if (weights.size() != m.cols()) throw ContractError("one weight per descriptor column required");
  SelectionResult sel;
  sel.convention = opts.convention;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    if (!std::isfinite(weights[j])) throw ContractError("non-finite descriptor weight");
    sel.per_descriptor.push_back({j, m.keys()[j], weights[j], false});
  }
  detail::finalize_selection(sel, opts.empty_class_fallback);
  return sel;
}

/// r-weighted mean over the kept descriptors of class `c`. Falls back to
/// the unweighted mean when the kept weights sum to exactly zero.
inline double weighted_class_score(const SimilarityMatrix& m, std::size_t image, Label c,
                                   const SelectionResult& sel) {
  if (image >= m.rows()) throw ContractError("image index out of range");
  const auto& kept = sel.kept(c);
  if (kept.empty()) throw ContractError("no kept descriptors for class " + std::string(label_token(c)));
  double num = 0.0;
  double den = 0.0;
  double plain = 0.0;
  for (auto j : kept) {
    if (j >= m.cols() || m.keys()[j].class_label != c) {
      throw ContractError("selection does not match the matrix columns");
    }
    const double r = sel.per_descriptor[j].r;
    const double phi = m.at(image, j);
    num += r * phi;
    den += r;
    plain += phi;
  }
  if (den == 0.0) return plain / static_cast<double>(kept.size());
  return num / den;
}

struct ZeroShot {};

struct WeightedSelected {
  SelectionResult selection;
};

using ScoringMode = std::variant<ZeroShot, WeightedSelected>;

/// s(+1, x) - s(-1, x), with plain or r-weighted class scores.
inline double classification_score(const SimilarityMatrix& m, std::size_t image, const ScoringMode& mode) {
  if (const auto* w = std::get_if<WeightedSelected>(&mode)) {
    return weighted_class_score(m, image, Label::Positive, w->selection) -
           weighted_class_score(m, image, Label::Negative, w->selection);
  }
  return class_score(m, image, Label::Positive) - class_score(m, image, Label::Negative);
}

/// +1 iff score strictly exceeds the cut-off.
constexpr Label classify(double score, double cutoff) noexcept {
  return score > cutoff ? Label::Positive : Label::Negative;
}

inline LabeledScoreList score_images(const SimilarityMatrix& m, std::span<const std::size_t> images,
                                     const ScoringMode& mode) {
  LabeledScoreList out;
  out.reserve(images.size());
  for (auto i : images) {
    out.push_back({m.image_ids().at(i), m.labels()[i], classification_score(m, i, mode)});
  }
  return out;
}

inline LabeledScoreList score_all(const SimilarityMatrix& m, const ScoringMode& mode) {
  std::vector<std::size_t> all(m.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return score_images(m, all, mode);
}

inline nlohmann::ordered_json selection_to_json(const SelectionResult& sel) {
  nlohmann::ordered_json doc;
  doc["sign_convention"] = to_string(sel.convention);
  doc["n_training"] = sel.n_training;
  doc["imbalanced"] = sel.imbalanced;
  doc["fallback_positive"] = sel.fallback_positive;
  doc["fallback_negative"] = sel.fallback_negative;
  doc["n_kept_positive"] = sel.kept_positive.size();
  doc["n_kept_negative"] = sel.kept_negative.size();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : sel.per_descriptor) {
    arr.push_back({{"class_label", to_int(d.key.class_label)},
                   {"index", d.key.index},
                   {"text", d.key.text},
                   {"r", d.r},
                   {"kept", d.kept}});
  }
  doc["descriptors"] = std::move(arr);
  return doc;
}

/// Reads a serialized selection and binds it to the columns of `m` by
/// (class_label, index, text). Kept flags are taken from the file.
inline SelectionResult selection_from_json(const nlohmann::json& doc, const SimilarityMatrix& m) {
  SelectionResult sel;
  try {
    sel.convention = parse_sign_convention(doc.at("sign_convention").get<std::string>());
    sel.n_training = doc.value("n_training", std::size_t{0});
    sel.imbalanced = doc.value("imbalanced", false);
    const auto& arr = doc.at("descriptors");
    if (arr.size() != m.cols()) throw ParseError("selection has " + std::to_string(arr.size()) +
                                                 " descriptors, matrix has " + std::to_string(m.cols()));
    sel.per_descriptor.resize(m.cols());
    std::vector<bool> seen(m.cols(), false);
    for (const auto& e : arr) {
      DescriptorKey key{label_from_int(e.at("class_label").get<int>()), e.at("index").get<int>(),
                        e.at("text").get<std::string>()};
      std::size_t col = m.cols();
      for (std::size_t j = 0; j < m.cols(); ++j) {
        if (m.keys()[j] == key) col = j;
      }
      if (col == m.cols()) throw ParseError("selection descriptor '" + key.text + "' not present in matrix");
      if (seen[col]) throw ParseError("selection lists descriptor '" + key.text + "' twice");
      seen[col] = true;
      const double r = e.at("r").get<double>();
      if (!std::isfinite(r)) throw ParseError("non-finite r in selection");
      sel.per_descriptor[col] = {col, key, r, e.at("kept").get<bool>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("selection JSON: ") + e.what());
  } catch (const ContractError& e) {
    throw ParseError(std::string("selection JSON: ") + e.what());
  }
  for (const auto& d : sel.per_descriptor) {
    if (!d.kept) continue;
    (d.key.class_label == Label::Positive ? sel.kept_positive : sel.kept_negative).push_back(d.column);
  }
  for (const auto& d : sel.per_descriptor) {
    if (d.kept && d.r < 0.0) (d.key.class_label == Label::Positive ? sel.fallback_positive : sel.fallback_negative) = true;
  }
  if (sel.kept_positive.empty() || sel.kept_negative.empty()) {
    throw ParseError("selection JSON: a class has no kept descriptors");
  }
  return sel;
}

}  // namespace descsel

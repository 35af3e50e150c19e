#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "descsel/core.hpp"

namespace descsel {

/// Synthetic similarity matrices with a known separation. For each class,
/// `informative` descriptors are N(delta, 1) on images of their own class
/// and N(0, 1) elsewhere; `distractors` are N(distractor_gap, 1) on their
/// own class and N(0, 1) elsewhere. Columns: positive block first, each
/// block informative then distractors. Rows: positives then negatives.
struct SyntheticSpec {
  int informative = 10;
  int distractors = 10;
  double delta = 0.8;
  double distractor_gap = 0.0;
  std::size_t positives = 100;
  std::size_t negatives = 100;
  std::string id_prefix = "img";
};

inline std::vector<DescriptorKey> synthetic_keys(const SyntheticSpec& params) {
  std::vector<DescriptorKey> keys;
  for (Label c : {Label::Positive, Label::Negative}) {
    const std::string cls = c == Label::Positive ? "pos" : "neg";
    int index = 0;
    for (int k = 0; k < params.informative; ++k) keys.push_back({c, index++, cls + " informative " + std::to_string(k)});
    for (int k = 0; k < params.distractors; ++k) keys.push_back({c, index++, cls + " distractor " + std::to_string(k)});
  }
  return keys;
}

template <typename Rng>
SimilarityMatrix generate_synthetic(const SyntheticSpec& params, Rng& rng) {
  if (params.informative < 0 || params.distractors < 0 || params.informative + params.distractors == 0) {
    throw ContractError("synthetic parameters need at least one descriptor per class");
  }
  auto keys = synthetic_keys(params);
  const std::size_t per_class = static_cast<std::size_t>(params.informative + params.distractors);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::string> ids;
  std::vector<Label> labels;
  std::vector<double> values;
  values.reserve((params.positives + params.negatives) * keys.size());
  for (std::size_t i = 0; i < params.positives + params.negatives; ++i) {
    const Label y = i < params.positives ? Label::Positive : Label::Negative;
    ids.push_back(params.id_prefix + std::to_string(i));
    labels.push_back(y);
    for (std::size_t j = 0; j < keys.size(); ++j) {
      const bool own_class = keys[j].class_label == y;
      const bool informative = (j % per_class) < static_cast<std::size_t>(params.informative);
      const double shift = own_class ? (informative ? params.delta : params.distractor_gap) : 0.0;
      values.push_back(shift + noise(rng));
    }
  }
  return SimilarityMatrix(std::move(ids), std::move(labels), std::move(keys), std::move(values));
}

}  // namespace descsel

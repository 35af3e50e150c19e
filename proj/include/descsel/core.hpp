#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace descsel {

/// Malformed input file or token.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a documented pre-condition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A statistic is undefined for the given input (zero variance, ...).
class UndefinedStatistic : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Binary class label, coded +1 / -1.
enum class Label : int { Negative = -1, Positive = 1 };

constexpr int to_int(Label l) noexcept { return static_cast<int>(l); }
constexpr Label opposite(Label l) noexcept {
  return l == Label::Positive ? Label::Negative : Label::Positive;
}

inline std::string_view label_token(Label l) noexcept {
  return l == Label::Positive ? "+1" : "-1";
}

/// Strict: only "+1" and "-1" are labels.
inline bool parse_label_token(std::string_view tok, Label& out) noexcept {
  if (tok == "+1") {
    out = Label::Positive;
    return true;
  }
  if (tok == "-1") {
    out = Label::Negative;
    return true;
  }
  return false;
}

inline Label label_from_int(int v) {
  if (v == 1) return Label::Positive;
  if (v == -1) return Label::Negative;
  throw ContractError("class label must be 1 or -1, got " + std::to_string(v));
}

inline std::string_view trim(std::string_view s) noexcept {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Trimmed, ASCII-lowercased form used for uniqueness and frequency counting.
inline std::string normalize_descriptor(std::string_view text) {
  std::string out(trim(text));
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
  });
  return out;
}

/// A class-tagged list of text descriptors from one generation run.
struct DescriptorSet {
  std::string set_id;
  Label class_label = Label::Positive;
  std::string class_name;
  std::vector<std::string> descriptors;
  std::string provenance;

  void validate() const {
    if (descriptors.empty()) {
      throw ContractError("descriptor set '" + set_id + "' has an empty descriptor list");
    }
    std::unordered_set<std::string> seen;
    for (const auto& d : descriptors) {
      auto norm = normalize_descriptor(d);
      if (norm.empty()) {
        throw ContractError("descriptor set '" + set_id + "' contains an empty descriptor");
      }
      if (!seen.insert(norm).second) {
        throw ContractError("descriptor set '" + set_id + "' contains duplicate descriptor '" +
                            d + "'");
      }
    }
  }
};

/// Identifies one matrix column: the class it was generated for, its index
/// within that class, and its text.
struct DescriptorKey {
  Label class_label = Label::Positive;
  int index = 0;
  std::string text;

  friend bool operator==(const DescriptorKey&, const DescriptorKey&) = default;
};

/// Images x descriptors table of similarity values phi(d, x) plus the
/// ground-truth label of each image. Row-major, immutable after construction.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;

  SimilarityMatrix(std::vector<std::string> image_ids, std::vector<Label> labels,
                   std::vector<DescriptorKey> keys, std::vector<double> values)
      : image_ids_(std::move(image_ids)),
        labels_(std::move(labels)),
        keys_(std::move(keys)),
        values_(std::move(values)) {
    if (image_ids_.size() != labels_.size()) {
      throw ContractError("image_ids and labels differ in length");
    }
    if (values_.size() != image_ids_.size() * keys_.size()) {
      throw ContractError("value count does not match rows x columns");
    }
    for (std::size_t i = 0; i < image_ids_.size(); ++i) {
      const auto& id = image_ids_[i];
      if (id.empty()) throw ContractError("empty image_id");
      if (!row_of_.emplace(id, i).second) throw ContractError("duplicate image_id '" + id + "'");
    }
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (keys_[i].class_label == keys_[j].class_label && keys_[i].index == keys_[j].index) {
          throw ContractError("duplicate descriptor key " + std::string(label_token(keys_[i].class_label)) +
                              ":" + std::to_string(keys_[i].index));
        }
      }
    }
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if (!std::isfinite(values_[k])) {
        throw ContractError("non-finite value at row " + std::to_string(k / keys_.size()) +
                            ", column " + std::to_string(k % keys_.size()));
      }
    }
  }

  std::size_t rows() const noexcept { return image_ids_.size(); }
  std::size_t cols() const noexcept { return keys_.size(); }

  double at(std::size_t image, std::size_t column) const noexcept {
    return values_[image * keys_.size() + column];
  }

  const std::vector<std::string>& image_ids() const noexcept { return image_ids_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }
  const std::vector<DescriptorKey>& keys() const noexcept { return keys_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Column indices whose descriptor belongs to `c`, in column order.
  std::vector<std::size_t> columns_of(Label c) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < keys_.size(); ++j) {
      if (keys_[j].class_label == c) out.push_back(j);
    }
    return out;
  }

  std::size_t index_of(const std::string& image_id) const {
    const auto it = row_of_.find(image_id);
    if (it == row_of_.end()) throw ContractError("unknown image_id '" + image_id + "'");
    return it->second;
  }

  friend bool operator==(const SimilarityMatrix& a, const SimilarityMatrix& b) {
    return a.image_ids_ == b.image_ids_ && a.labels_ == b.labels_ && a.keys_ == b.keys_ &&
           a.values_ == b.values_;
  }

 private:
  std::vector<std::string> image_ids_;
  std::vector<Label> labels_;
  std::vector<DescriptorKey> keys_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> row_of_;
};

struct LabeledScore {
  std::string image_id;
  Label label = Label::Positive;
  double score = 0.0;

  friend bool operator==(const LabeledScore&, const LabeledScore&) = default;
};

using LabeledScoreList = std::vector<LabeledScore>;

inline void validate_scores(const LabeledScoreList& scores) {
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) {
      throw ContractError("non-finite score for image '" + s.image_id + "'");
    }
  }
}

/// (positives, negatives)
inline std::pair<std::size_t, std::size_t> class_counts(const LabeledScoreList& scores) noexcept {
  std::size_t pos = 0;
  for (const auto& s : scores) pos += s.label == Label::Positive ? 1 : 0;
  return {pos, scores.size() - pos};
}

}  // namespace descsel

#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_set>
#include <vector>

#include "descsel/core.hpp"

namespace descsel {

namespace base64url {

inline constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

/// Unpadded base64url.
inline std::string encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() * 4 + 2) / 3);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const auto v = (static_cast<unsigned char>(bytes[i]) << 16) |
                   (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const auto rest = bytes.size() - i;
  if (rest == 1) {
    const auto v = static_cast<unsigned char>(bytes[i]) << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
  } else if (rest == 2) {
    const auto v = (static_cast<unsigned char>(bytes[i]) << 16) |
                   (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
  }
  return out;
}

/// Throws ParseError on characters outside the alphabet, padding, or an
/// impossible length.
inline std::string decode(std::string_view text) {
  std::array<int, 256> lookup{};
  lookup.fill(-1);
  for (std::size_t k = 0; k < kAlphabet.size(); ++k) {
    lookup[static_cast<unsigned char>(kAlphabet[k])] = static_cast<int>(k);
  }
  if (text.size() % 4 == 1) throw ParseError("invalid base64url length");
  std::string out;
  unsigned acc = 0;
  int bits = 0;
  for (char ch : text) {
    const int v = lookup[static_cast<unsigned char>(ch)];
    if (v < 0) throw ParseError(std::string("invalid base64url character '") + ch + "'");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  if ((acc & ((1u << bits) - 1)) != 0) throw ParseError("non-canonical base64url trailing bits");
  return out;
}

}  // namespace base64url

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view tok, double& out) {
  if (tok.empty()) return false;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

inline std::string format_double(double v) {
  std::array<char, 40> buf{};
  const int n = std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return std::string(buf.data(), static_cast<std::size_t>(n));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw ParseError("write failed for '" + path.string() + "'");
}

/// Splits on LF, dropping one trailing CR per line and a final empty line.
inline std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return lines;
}

inline void check_cell_text(std::string_view s, std::string_view what) {
  if (s.find_first_of(",\n\r") != std::string_view::npos) {
    throw ContractError(std::string(what) + " '" + std::string(s) +
                        "' contains a comma or line break");
  }
}

}  // namespace detail

inline std::string format_key(const DescriptorKey& k) {
  return std::string(label_token(k.class_label)) + ":" + std::to_string(k.index) + ":" +
         base64url::encode(k.text);
}

inline DescriptorKey parse_key(std::string_view tok) {
  const auto parts = detail::split(tok, ':');
  if (parts.size() != 3) throw ParseError("descriptor key '" + std::string(tok) + "' is not label:index:text");
  DescriptorKey key;
  if (!parse_label_token(parts[0], key.class_label)) {
    throw ParseError("descriptor key '" + std::string(tok) + "' has unknown class label");
  }
  const auto [ptr, ec] = std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), key.index);
  if (ec != std::errc{} || ptr != parts[1].data() + parts[1].size() || key.index < 0) {
    throw ParseError("descriptor key '" + std::string(tok) + "' has invalid index");
  }
  key.text = base64url::decode(parts[2]);
  if (trim(key.text).empty()) throw ParseError("descriptor key '" + std::string(tok) + "' has empty text");
  return key;
}

/// Parses the matrix CSV text. `source` names the input in diagnostics.
/// Lines starting with '#' before the header are comments.
inline SimilarityMatrix parse_similarity_matrix(std::string_view text, std::string_view source = "<input>") {
  const auto lines = detail::lines_of(text);
  const std::string where(source);
  std::size_t first = 0;
  while (first < lines.size() && !lines[first].empty() && lines[first].front() == '#') ++first;
  if (first == lines.size()) throw ParseError(where + ": missing header line");

  const auto header = detail::split(lines[first], ',');
  if (header.size() < 2 || header[0] != "image_id" || header[1] != "label") {
    throw ParseError(where + ": line " + std::to_string(first + 1) +
                     ": header must start with 'image_id,label'");
  }
  std::vector<DescriptorKey> keys;
  for (std::size_t c = 2; c < header.size(); ++c) {
    try {
      keys.push_back(parse_key(header[c]));
    } catch (const ParseError& e) {
      throw ParseError(where + ": header column " + std::to_string(c + 1) + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (keys[i].class_label == keys[j].class_label && keys[i].index == keys[j].index) {
        throw ParseError(where + ": header column " + std::to_string(i + 3) + ": duplicate descriptor key");
      }
    }
  }

  std::vector<std::string> ids;
  std::vector<Label> labels;
  std::vector<double> values;
  std::unordered_set<std::string> seen;
  for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
    const auto row = ln + 1;
    const auto cells = detail::split(lines[ln], ',');
    if (cells.size() != header.size()) {
      throw ParseError(where + ": row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    }
    if (cells[0].empty()) throw ParseError(where + ": row " + std::to_string(row) + ": empty image_id");
    if (!seen.emplace(cells[0]).second) {
      throw ParseError(where + ": row " + std::to_string(row) + ": duplicate image_id '" +
                       std::string(cells[0]) + "'");
    }
    Label label{};
    if (!parse_label_token(cells[1], label)) {
      throw ParseError(where + ": row " + std::to_string(row) + ": unknown label token '" +
                       std::string(cells[1]) + "'");
    }
    ids.emplace_back(cells[0]);
    labels.push_back(label);
    for (std::size_t c = 2; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v)) {
        throw ParseError(where + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                         ": invalid or non-finite value '" + std::string(cells[c]) + "'");
      }
      values.push_back(v);
    }
  }
  return SimilarityMatrix(std::move(ids), std::move(labels), std::move(keys), std::move(values));
}

inline SimilarityMatrix read_similarity_matrix(const std::filesystem::path& path) {
  return parse_similarity_matrix(detail::read_file(path), path.string());
}

inline std::string format_similarity_matrix(const SimilarityMatrix& m) {
  std::string out = "image_id,label";
  for (const auto& k : m.keys()) {
    out += ',';
    out += format_key(k);
  }
  out += '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    detail::check_cell_text(m.image_ids()[i], "image_id");
    out += m.image_ids()[i];
    out += ',';
    out += label_token(m.labels()[i]);
    for (std::size_t j = 0; j < m.cols(); ++j) {
      out += ',';
      out += detail::format_double(m.at(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void write_similarity_matrix(const SimilarityMatrix& m, const std::filesystem::path& path) {
  detail::write_file(path, format_similarity_matrix(m));
}

inline std::vector<DescriptorSet> parse_descriptor_sets(std::string_view text, std::string_view source = "<input>") {
  const std::string where(source);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError(where + ": top level must be an array");
  std::vector<DescriptorSet> sets;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    const auto entry = where + ": entry " + std::to_string(i);
    if (!obj.is_object()) throw ParseError(entry + ": not an object");
    if (!obj.contains("class_label") || !obj["class_label"].is_number_integer()) {
      throw ParseError(entry + ": missing integer class_label");
    }
    if (!obj.contains("descriptors") || !obj["descriptors"].is_array()) {
      throw ParseError(entry + ": missing descriptors array");
    }
    DescriptorSet set;
    try {
      set.class_label = label_from_int(obj["class_label"].get<int>());
      set.set_id = obj.value("set_id", std::string{});
      set.class_name = obj.value("class_name", std::string{});
      set.provenance = obj.value("provenance", std::string{});
      for (const auto& d : obj["descriptors"]) {
        if (!d.is_string()) throw ParseError("descriptor is not a string");
        set.descriptors.push_back(d.get<std::string>());
      }
      set.validate();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(entry + ": " + e.what());
    } catch (const std::exception& e) {
      throw ParseError(entry + ": " + e.what());
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

inline std::vector<DescriptorSet> read_descriptor_sets(const std::filesystem::path& path) {
  return parse_descriptor_sets(detail::read_file(path), path.string());
}

inline nlohmann::ordered_json descriptor_sets_to_json(const std::vector<DescriptorSet>& sets) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : sets) {
    arr.push_back({{"set_id", s.set_id},
                   {"class_label", to_int(s.class_label)},
                   {"class_name", s.class_name},
                   {"descriptors", s.descriptors},
                   {"provenance", s.provenance}});
  }
  return arr;
}

/// Header `image_id,label,score`.
inline std::string format_scores(const LabeledScoreList& scores) {
  std::string out = "image_id,label,score\n";
  for (const auto& s : scores) {
    detail::check_cell_text(s.image_id, "image_id");
    out += s.image_id;
    out += ',';
    out += label_token(s.label);
    out += ',';
    out += detail::format_double(s.score);
    out += '\n';
  }
  return out;
}

inline LabeledScoreList parse_scores(std::string_view text, std::string_view source = "<input>") {
  const std::string where(source);
  const auto lines = detail::lines_of(text);
  if (lines.empty() || lines[0] != "image_id,label,score") {
    throw ParseError(where + ": header must be 'image_id,label,score'");
  }
  LabeledScoreList out;
  std::unordered_set<std::string> seen;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const auto row = std::to_string(ln + 1);
    const auto cells = detail::split(lines[ln], ',');
    if (cells.size() != 3) throw ParseError(where + ": row " + row + ": expected 3 cells");
    LabeledScore s;
    s.image_id = std::string(cells[0]);
    if (s.image_id.empty() || !seen.insert(s.image_id).second) {
      throw ParseError(where + ": row " + row + ": empty or duplicate image_id");
    }
    if (!parse_label_token(cells[1], s.label)) {
      throw ParseError(where + ": row " + row + ": unknown label token '" + std::string(cells[1]) + "'");
    }
    if (!detail::parse_double(cells[2], s.score)) {
      throw ParseError(where + ": row " + row + ", column 3: invalid or non-finite score");
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline LabeledScoreList read_scores(const std::filesystem::path& path) {
  return parse_scores(detail::read_file(path), path.string());
}

/// One image id per line; blank lines and '#' comments are skipped.
inline std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (auto line : detail::lines_of(text)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (!seen.emplace(line).second) {
      throw ParseError(path.string() + ": duplicate id '" + std::string(line) + "'");
    }
    ids.emplace_back(line);
  }
  return ids;
}

inline std::vector<std::size_t> resolve_ids(const SimilarityMatrix& m, const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(m.index_of(id));
  return out;
}

}  // namespace descsel

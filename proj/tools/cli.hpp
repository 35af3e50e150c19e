#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "descsel/descsel.hpp"

namespace descsel::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kInputError = 1, kInternalError = 2 };

struct ScoreArgs {
  std::string matrix;
  std::string selection;
  std::string images;
  std::string out = "-";
};

struct SelectArgs {
  std::string matrix;
  std::string train_ids;
  std::string sign_convention = "per_class";
  bool no_fallback = false;
  std::string out = "-";
};

struct EvaluateArgs {
  std::string scores;
  std::string matrix;
  std::string selection;
  std::string test_ids;
  std::optional<double> cutoff;
  std::string calibrate_ids;
  std::string out = "-";
  std::string roc_out;
};

struct ShapeArgs {
  std::string masks;
  std::string out = "-";
  bool largest_component = false;
  std::optional<int> margin;
};

struct NShotArgs {
  std::string matrix;
  std::string train_ids;
  std::string test_ids;
  std::vector<int> n_values;
  int runs = 100;
  std::string sampling = "without_replacement";
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string sign_convention = "per_class";
  bool no_fallback = false;
  std::string out = "-";
  std::string curve_out;
};

struct VariabilityArgs {
  std::vector<std::string> matrices;
  std::vector<std::string> descriptors;
  std::string icc = "2,1";
  std::string out = "-";
};

struct ExportArgs {
  std::string matrix;
  std::string out = "-";
};

inline void emit(const std::string& path, const std::string& data, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << data;
    out.flush();
  } else {
    detail::write_file(path, data);
  }
}

inline std::string dump(const nlohmann::ordered_json& doc) { return doc.dump(2) + "\n"; }

inline std::vector<std::size_t> all_rows(const SimilarityMatrix& m) {
  std::vector<std::size_t> idx(m.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

inline ScoringMode load_mode(const SimilarityMatrix& m, const std::string& selection_path) {
  if (selection_path.empty()) return ZeroShot{};
  const auto doc = nlohmann::json::parse(detail::read_file(selection_path), nullptr, false);
  if (doc.is_discarded()) throw ParseError(selection_path + ": invalid JSON");
  return WeightedSelected{selection_from_json(doc, m)};
}

inline std::pair<std::size_t, std::size_t> kept_counts(const SimilarityMatrix& m, const ScoringMode& mode) {
  if (const auto* w = std::get_if<WeightedSelected>(&mode)) {
    return {w->selection.kept_positive.size(), w->selection.kept_negative.size()};
  }
  return {m.columns_of(Label::Positive).size(), m.columns_of(Label::Negative).size()};
}

inline LabeledScoreList subset(const LabeledScoreList& scores, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < scores.size(); ++i) pos.emplace(scores[i].image_id, i);
  LabeledScoreList out;
  for (const auto& id : ids) {
    const auto it = pos.find(id);
    if (it == pos.end()) throw ContractError("unknown image_id '" + id + "'");
    out.push_back(scores[it->second]);
  }
  return out;
}

inline void run_score(const ScoreArgs& a, std::ostream& out) {
  const auto m = read_similarity_matrix(a.matrix);
  const auto mode = load_mode(m, a.selection);
  const auto rows = a.images.empty() ? all_rows(m) : resolve_ids(m, read_id_list(a.images));
  emit(a.out, format_scores(score_images(m, rows, mode)), out);
}

inline void run_select(const SelectArgs& a, std::ostream& out, std::ostream& err) {
  const auto m = read_similarity_matrix(a.matrix);
  const auto train = resolve_ids(m, read_id_list(a.train_ids));
  SelectionOptions opts{parse_sign_convention(a.sign_convention), !a.no_fallback};
  const auto sel = descriptor_scores(m, train, opts);
  if (sel.imbalanced) err << "warning: training set has unequal class counts\n";
  if (sel.fallback_positive) err << "warning: all positive-class descriptors scored negative; kept the best one\n";
  if (sel.fallback_negative) err << "warning: all negative-class descriptors scored negative; kept the best one\n";
  emit(a.out, dump(selection_to_json(sel)), out);
}

inline void run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  LabeledScoreList scores;
  std::size_t kept_pos = 0, kept_neg = 0;
  if (!a.matrix.empty()) {
    const auto m = read_similarity_matrix(a.matrix);
    const auto mode = load_mode(m, a.selection);
    scores = score_all(m, mode);
    std::tie(kept_pos, kept_neg) = kept_counts(m, mode);
  } else {
    scores = read_scores(a.scores);
  }
  const auto test = a.test_ids.empty() ? scores : subset(scores, read_id_list(a.test_ids));
  double cutoff = a.cutoff.value_or(0.0);
  if (!a.calibrate_ids.empty()) cutoff = calibrate_cutoff(subset(scores, read_id_list(a.calibrate_ids)));
  const auto report = evaluate(test, cutoff, kept_pos, kept_neg);
  if (!a.roc_out.empty()) emit(a.roc_out, format_roc_csv(roc_auc(test)), out);
  emit(a.out, dump(report_to_json(report)), out);
}

inline void run_shape(const ShapeArgs& a, std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(a.masks)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::string header = shape_csv_header();
  if (a.margin) header.insert(header.size() - 1, ",crop_x0,crop_y0,crop_x1,crop_y1");
  std::string csv = header;
  for (const auto& f : files) {
    const auto mask = read_pgm(f);
    std::string row;
    try {
      row = format_shape_row(f.stem().string(), shape_features(mask, {a.largest_component}));
    } catch (const ContractError& e) {
      throw ContractError(f.string() + ": " + e.what());
    }
    if (a.margin) {
      const auto b = crop_bbox_with_margin(mask, *a.margin);
      row.insert(row.size() - 1, "," + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
                                     std::to_string(b.x1) + "," + std::to_string(b.y1));
    }
    csv += row;
  }
  emit(a.out, csv, out);
}

inline void run_nshot_cmd(const NShotArgs& a, std::ostream& out) {
  if (!a.seed) throw ContractError("nshot requires --seed");
  const auto m = read_similarity_matrix(a.matrix);
  const auto train = resolve_ids(m, read_id_list(a.train_ids));
  const auto test = resolve_ids(m, read_id_list(a.test_ids));
  NShotConfig cfg;
  cfg.n_values = a.n_values;
  cfg.runs_per_n = a.runs;
  cfg.sampling = parse_sampling(a.sampling);
  cfg.base_seed = *a.seed;
  cfg.selection = {parse_sign_convention(a.sign_convention), !a.no_fallback};
  cfg.threads = std::max(1u, a.threads);
  const auto res = run_nshot(m, train, test, cfg);
  auto doc = nshot_to_json(res, cfg);
  doc["zero_shot"] = report_to_json(evaluate_zero_shot(m, test, 0.0));
  if (!a.curve_out.empty()) emit(a.curve_out, format_nshot_curve_csv(res), out);
  emit(a.out, dump(doc), out);
}

inline void run_variability_cmd(const VariabilityArgs& a, std::ostream& out) {
  std::vector<SimilarityMatrix> matrices;
  for (const auto& p : a.matrices) matrices.push_back(read_similarity_matrix(p));
  std::vector<std::vector<DescriptorSet>> sets;
  for (const auto& p : a.descriptors) sets.push_back(read_descriptor_sets(p));
  if (!sets.empty() && sets.size() != matrices.size()) {
    throw ContractError("--descriptors must be given once per --matrix");
  }
  const auto rep = run_variability(matrices, sets, parse_icc_model(a.icc));
  emit(a.out, dump(variability_to_json(rep)), out);
}

inline void run_export(const ExportArgs& a, std::ostream& out) {
  emit(a.out, format_similarity_matrix(export_feature_vectors(read_similarity_matrix(a.matrix))), out);
}

/// Entry point shared by the executable and the tests. Exit codes: 0 ok,
/// 1 input or contract error, 2 internal invariant violation.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Descriptor-based few-shot classification from image-descriptor similarity matrices"};
  app.name("descsel");
  app.set_config("--config", "", "Key-value config file mirroring the flags ([subcommand] sections)");
  app.require_subcommand(1);

  ScoreArgs score;
  auto* sc = app.add_subcommand("score", "Classification score p(x) per image");
  sc->add_option("--matrix", score.matrix, "Similarity matrix CSV")->required()->check(CLI::ExistingFile);
  sc->add_option("--selection", score.selection, "Selection JSON; weighted scoring over kept descriptors")
      ->check(CLI::ExistingFile);
  sc->add_option("--images", score.images, "Restrict to the image ids listed in this file")->check(CLI::ExistingFile);
  sc->add_option("--out", score.out, "Output CSV ('-' for stdout)")->capture_default_str();

  SelectArgs select;
  auto* se = app.add_subcommand("select", "Score and prune descriptors on training images");
  se->add_option("--matrix", select.matrix, "Similarity matrix CSV")->required()->check(CLI::ExistingFile);
  se->add_option("--train-ids", select.train_ids, "Training image ids, one per line")
      ->required()
      ->check(CLI::ExistingFile);
  se->add_option("--sign-convention", select.sign_convention, "per_class or as_printed")
      ->check(CLI::IsMember({"per_class", "as_printed"}))
      ->capture_default_str();
  se->add_flag("--no-fallback", select.no_fallback, "Do not keep the best descriptor of a fully pruned class");
  se->add_option("--out", select.out, "Output JSON ('-' for stdout)")->capture_default_str();

  EvaluateArgs eval;
  double cutoff_value = 0.0;
  auto* ev = app.add_subcommand("evaluate", "Accuracy, AUC and confusion counts");
  auto* ev_scores = ev->add_option("--scores", eval.scores, "Scores CSV from `score`")->check(CLI::ExistingFile);
  auto* ev_matrix = ev->add_option("--matrix", eval.matrix, "Similarity matrix CSV")->check(CLI::ExistingFile);
  ev_scores->excludes(ev_matrix);
  auto* ev_sel = ev->add_option("--selection", eval.selection, "Selection JSON (with --matrix)")
                     ->check(CLI::ExistingFile)
                     ->needs(ev_matrix);
  (void)ev_sel;
  ev->add_option("--test-ids", eval.test_ids, "Evaluate on these image ids only")->check(CLI::ExistingFile);
  auto* ev_cut = ev->add_option("--cutoff", cutoff_value, "Fixed cut-off b (default 0)");
  auto* ev_cal = ev->add_option("--calibrate-ids", eval.calibrate_ids, "Calibrate the cut-off on these image ids")
                     ->check(CLI::ExistingFile);
  ev_cut->excludes(ev_cal);
  ev->add_option("--out", eval.out, "Report JSON ('-' for stdout)")->capture_default_str();
  ev->add_option("--roc-out", eval.roc_out, "ROC curve CSV (fpr,tpr,cutoff)");

  ShapeArgs shape;
  int margin_value = 0;
  auto* sh = app.add_subcommand("shape", "Shape features of PGM masks");
  sh->add_option("--masks", shape.masks, "Directory of .pgm masks")->required()->check(CLI::ExistingDirectory);
  sh->add_option("--out", shape.out, "Output CSV ('-' for stdout)")->capture_default_str();
  sh->add_flag("--largest-component", shape.largest_component, "Keep only the largest 8-connected component");
  auto* sh_margin = sh->add_option("--margin", margin_value, "Also report the bbox grown by this margin")
                        ->check(CLI::NonNegativeNumber);

  NShotArgs nshot;
  std::uint64_t seed_value = 0;
  auto* ns = app.add_subcommand("nshot", "n-shot descriptor selection experiment");
  ns->add_option("--matrix", nshot.matrix, "Similarity matrix CSV")->required()->check(CLI::ExistingFile);
  ns->add_option("--train-ids", nshot.train_ids, "Training pool image ids")->required()->check(CLI::ExistingFile);
  ns->add_option("--test-ids", nshot.test_ids, "Test image ids")->required()->check(CLI::ExistingFile);
  ns->add_option("--n", nshot.n_values, "Image pairs per run (repeatable)")->required()->check(CLI::PositiveNumber);
  ns->add_option("--runs", nshot.runs, "Runs per n")->check(CLI::PositiveNumber)->capture_default_str();
  ns->add_option("--sampling", nshot.sampling, "with_replacement or without_replacement")
      ->check(CLI::IsMember({"with_replacement", "without_replacement"}))
      ->capture_default_str();
  auto* ns_seed = ns->add_option("--seed", seed_value, "Base seed (required)")->required();
  (void)ns_seed;
  ns->add_option("--threads", nshot.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  ns->add_option("--sign-convention", nshot.sign_convention, "per_class or as_printed")
      ->check(CLI::IsMember({"per_class", "as_printed"}))
      ->capture_default_str();
  ns->add_flag("--no-fallback", nshot.no_fallback, "Do not keep the best descriptor of a fully pruned class");
  ns->add_option("--out", nshot.out, "Report JSON ('-' for stdout)")->capture_default_str();
  ns->add_option("--curve-out", nshot.curve_out, "Curve CSV");

  VariabilityArgs var;
  auto* va = app.add_subcommand("variability", "Zero-shot variability across descriptor-set runs");
  va->add_option("--matrix", var.matrices, "One similarity matrix per run (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  va->add_option("--descriptors", var.descriptors, "Descriptor JSON per run, same order as --matrix")
      ->check(CLI::ExistingFile);
  va->add_option("--icc", var.icc, "ICC variant: 2,1 or 3,1")
      ->check(CLI::IsMember({"2,1", "3,1"}))
      ->delimiter('\0')
      ->capture_default_str();
  va->add_option("--out", var.out, "Report JSON ('-' for stdout)")->capture_default_str();

  ExportArgs exp;
  auto* ex = app.add_subcommand("export-features", "Feature vectors per image, positive block first");
  ex->add_option("--matrix", exp.matrix, "Similarity matrix CSV")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", exp.out, "Output CSV ('-' for stdout)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (*sc) {
      run_score(score, out);
    } else if (*se) {
      run_select(select, out, err);
    } else if (*ev) {
      if (eval.scores.empty() && eval.matrix.empty()) throw ContractError("evaluate needs --scores or --matrix");
      if (*ev_cut) eval.cutoff = cutoff_value;
      run_evaluate(eval, out);
    } else if (*sh) {
      if (*sh_margin) shape.margin = margin_value;
      run_shape(shape, out);
    } else if (*ns) {
      nshot.seed = seed_value;
      run_nshot_cmd(nshot, out);
    } else if (*va) {
      run_variability_cmd(var, out);
    } else if (*ex) {
      run_export(exp, out);
    }
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const UndefinedStatistic& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kOk;
}

}  // namespace descsel::cli

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Run from the build tree; the CLI path is baked in at build time.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "descsel/descsel.hpp"
#include "descsel/synthetic.hpp"
#include "test_util.hpp"

using namespace descsel;
namespace fs = std::filesystem;

namespace {

int failures = 0;

/// Collects the first few mismatches of one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failed_;
    if (notes_.size() < 3) notes_.push_back(what);
  }
  bool ok() const { return failed_ == 0; }
  std::size_t checks() const { return checks_; }
  std::string notes() const {
    std::string s;
    for (const auto& n : notes_) s += "\n      " + n;
    if (failed_ > notes_.size()) s += "\n      ... " + std::to_string(failed_ - notes_.size()) + " more";
    return s;
  }

 private:
  std::size_t checks_ = 0, failed_ = 0;
  std::vector<std::string> notes_;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  " << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

/// Runs `body`, then reports it with its runtime against `limit_s` (0 = none).
void criterion(const std::string& name, double limit_s, const std::function<std::string(Check&)>& body) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  try {
    detail = body(c);
  } catch (const std::exception& e) {
    c.expect(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = c.ok();
  detail += (detail.empty() ? "" : ", ") + std::to_string(c.checks()) + " checks, " + fmt(secs) + " s";
  if (limit_s > 0) {
    detail += " (limit " + fmt(limit_s) + " s)";
    ok = ok && secs < limit_s;
  }
  report(name, ok, detail + c.notes());
}

/// |a - b| <= tol * max(|a|, |b|, scale); `scale` is the magnitude of the inputs.
bool close(double a, long double b, double tol, double scale) {
  const double bd = static_cast<double>(b);
  return std::fabs(a - bd) <= tol * std::max({std::fabs(a), std::fabs(bd), scale});
}

double input_scale(const SimilarityMatrix& m) {
  double s = 0.0;
  for (double v : m.values()) s = std::max(s, std::fabs(v));
  return s;
}

/// Kept flags under the pruning rule, with the per-class best-descriptor fallback.
std::vector<bool> oracle_kept(const SimilarityMatrix& m, const std::vector<long double>& r) {
  std::vector<bool> kept(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) kept[j] = r[j] >= 0.0L;
  for (Label c : {Label::Positive, Label::Negative}) {
    std::size_t best = m.cols();
    bool any = false;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (m.keys()[j].class_label != c) continue;
      any = any || kept[j];
      if (best == m.cols() || r[j] > r[best]) best = j;
    }
    if (!any) kept[best] = true;
  }
  return kept;
}

long double oracle_weighted_kept(const SimilarityMatrix& m, std::size_t image, Label c,
                                 const std::vector<long double>& r, const std::vector<bool>& kept) {
  long double num = 0.0L, den = 0.0L, plain = 0.0L, count = 0.0L;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    if (m.keys()[j].class_label != c || !kept[j]) continue;
    const long double phi = m.values()[image * m.cols() + j];
    num += r[j] * phi;
    den += r[j];
    plain += phi;
    count += 1.0L;
  }
  return den == 0.0L ? plain / count : num / den;
}

std::string equation_oracles(Check& c) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> images(2, 50), per_class(1, 20);
  std::size_t fallbacks = 0;
  const int matrices = 1000;
  for (int t = 0; t < matrices; ++t) {
    const auto m = testutil::random_matrix(rng, images(rng), per_class(rng), per_class(rng));
    const double scale = input_scale(m);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const auto sp = testutil::oracle_class_score(m, i, Label::Positive);
      const auto sn = testutil::oracle_class_score(m, i, Label::Negative);
      c.expect(close(class_score(m, i, Label::Positive), sp, 1e-12, scale), "class_score(+1)");
      c.expect(close(class_score(m, i, Label::Negative), sn, 1e-12, scale), "class_score(-1)");
      c.expect(close(classification_score(m, i, ZeroShot{}), sp - sn, 1e-12, scale), "classification_score zero-shot");
    }
    // random training subset containing both classes
    std::vector<std::size_t> train{0, 1};
    std::bernoulli_distribution take(0.5);
    for (std::size_t i = 2; i < m.rows(); ++i) {
      if (take(rng)) train.push_back(i);
    }
    std::shuffle(train.begin(), train.end(), rng);
    const bool as_printed = t % 4 == 3;
    const auto sel = descriptor_scores(m, train, {as_printed ? SignConvention::AsPrinted : SignConvention::PerClass});
    const auto r = testutil::oracle_descriptor_scores(m, train, as_printed);
    const auto kept = oracle_kept(m, r);
    fallbacks += (sel.fallback_positive || sel.fallback_negative) ? 1 : 0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      c.expect(close(sel.per_descriptor[j].r, r[j], 1e-12, scale), "descriptor_scores r, matrix " + std::to_string(t));
      c.expect(sel.per_descriptor[j].kept == kept[j], "descriptor_scores kept flag, matrix " + std::to_string(t));
    }
    const ScoringMode mode = WeightedSelected{sel};
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const auto wp = oracle_weighted_kept(m, i, Label::Positive, r, kept);
      const auto wn = oracle_weighted_kept(m, i, Label::Negative, r, kept);
      c.expect(close(weighted_class_score(m, i, Label::Positive, sel), wp, 1e-12, scale), "weighted_class_score(+1)");
      c.expect(close(weighted_class_score(m, i, Label::Negative, sel), wn, 1e-12, scale), "weighted_class_score(-1)");
      c.expect(close(classification_score(m, i, mode), wp - wn, 1e-12, scale), "classification_score weighted");
    }
  }
  return std::to_string(matrices) + " matrices, " + std::to_string(fallbacks) + " with fallback, tol 1e-12";
}

std::string degeneration(Check& c) {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> images(2, 50), per_class(1, 20);
  std::uniform_real_distribution<double> weight(1e-3, 10.0);
  for (int t = 0; t < 100; ++t) {
    const auto m = testutil::random_matrix(rng, images(rng), per_class(rng), per_class(rng));
    const std::vector<double> w(m.cols(), weight(rng));
    const ScoringMode mode = WeightedSelected{selection_from_weights(m, w)};
    const double scale = input_scale(m);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      c.expect(close(classification_score(m, i, mode), classification_score(m, i, ZeroShot{}), 1e-12, scale),
               "matrix " + std::to_string(t) + " image " + std::to_string(i));
    }
  }
  return "100 matrices, tol 1e-12";
}

std::string auc_correctness(Check& c) {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> size(2, 200);
  std::size_t tied = 0;
  for (int t = 0; t < 500; ++t) {
    const int levels = t % 2 == 0 ? 0 : 2 + static_cast<int>(rng() % 10);
    tied += levels > 0 ? 1 : 0;
    const auto s = testutil::random_scores(rng, size(rng), levels);
    const double got = roc_auc(s).auc;
    const double want = testutil::oracle_auc(s);
    c.expect(got == want, "list " + std::to_string(t) + ": " + fmt(got) + " vs " + fmt(want));
  }
  return "500 lists (" + std::to_string(tied) + " heavily tied), exact";
}

std::string cutoff_optimality(Check& c) {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::size_t> size(2, 200);
  for (int t = 0; t < 500; ++t) {
    const int levels = t % 3 == 0 ? 0 : 2 + static_cast<int>(rng() % 10);
    const auto s = testutil::random_scores(rng, size(rng), levels);
    long long best = std::numeric_limits<long long>::min();
    for (double cut : testutil::oracle_cutoffs(s)) best = std::max(best, testutil::oracle_youden_numerator(s, cut));
    const long long got = testutil::oracle_youden_numerator(s, calibrate_cutoff(s));
    c.expect(got == best, "instance " + std::to_string(t));
  }
  return "500 instances, Youden J numerator compared exactly";
}

std::string spearman_icc(Check& c) {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> size(3, 60);
  int done = 0;
  while (done < 200) {
    const auto n = size(rng);
    std::uniform_int_distribution<int> lvl(0, 1 + static_cast<int>(n / 4));
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = lvl(rng);
    for (auto& v : y) v = lvl(rng);
    const auto rx = testutil::oracle_mid_ranks(x);
    const auto ry = testutil::oracle_mid_ranks(y);
    if (std::all_of(rx.begin(), rx.end(), [&](double r) { return r == rx[0]; }) ||
        std::all_of(ry.begin(), ry.end(), [&](double r) { return r == ry[0]; })) {
      continue;
    }
    ++done;
    c.expect(std::fabs(spearman(x, y) - testutil::oracle_pearson(rx, ry)) <= 1e-10, "instance " + std::to_string(done));
  }
  const std::vector<std::vector<double>> table{{1, 2, 3, 4}, {2, 2, 4, 5}, {1, 3, 3, 6}};
  const double v = icc(table);
  c.expect(std::fabs(v - 83.0 / 101.0) <= 1e-9, "ICC(2,1) " + fmt(v) + " vs 83/101");
  return "200 tied instances tol 1e-10; ICC(2,1) worked table = " + fmt(v) + " (83/101) tol 1e-9";
}

std::string shape_suite(Check& c) {
  for (auto [w, h] : {std::pair{1, 1}, {1, 9}, {5, 3}, {64, 17}, {200, 200}}) {
    if (w * h == 1) continue;
    const auto f = shape_features(testutil::filled_rect(w + 4, h + 4, 2, 2, w, h));
    c.expect(f.rectangularity == 1.0, "rectangle " + std::to_string(w) + "x" + std::to_string(h));
  }
  const auto sq = shape_features(testutil::filled_rect(202, 202, 1, 1, 200, 200));
  c.expect(std::fabs(sq.roundness - std::numbers::pi / 4.0) <= 0.02, "square roundness " + fmt(sq.roundness));

  const auto disk_file = shape_features(read_pgm(testutil::data_dir() / "golden_masks" / "disk_r100.pgm"));
  const auto disk_gen = shape_features(testutil::disk(100));
  const double golden = 0.90153148773964586;
  c.expect(disk_gen.roundness >= 0.90 && disk_gen.roundness <= 1.10, "disk roundness " + fmt(disk_gen.roundness));
  c.expect(std::fabs(disk_gen.roundness - golden) <= 1e-9, "disk roundness vs golden");
  c.expect(std::fabs(disk_file.roundness - golden) <= 1e-9, "golden mask file roundness");

  std::mt19937_64 rng(606);
  for (int t = 0; t < 50; ++t) {
    const auto m = testutil::random_blob(rng, 40, 40, 60 + static_cast<int>(rng() % 300));
    const auto a = shape_features(m);
    const auto moved = shape_features(testutil::translate(m, 1 + static_cast<int>(rng() % 20),
                                                          1 + static_cast<int>(rng() % 20), 64, 64));
    c.expect(a.area == moved.area && a.perimeter == moved.perimeter && a.roundness == moved.roundness &&
                 a.rectangularity == moved.rectangularity,
             "translation, mask " + std::to_string(t));
    auto r = m;
    for (int q = 0; q < 3; ++q) {
      r = testutil::rotate90(r);
      const auto b = shape_features(r);
      c.expect(a.area == b.area && a.perimeter == b.perimeter && a.roundness == b.roundness &&
                   a.rectangularity == b.rectangularity,
               "rotation " + std::to_string(90 * (q + 1)) + ", mask " + std::to_string(t));
    }
  }
  return "square roundness " + fmt(sq.roundness) + ", disk r=100 roundness " + fmt(disk_gen.roundness) +
         ", 50 random masks";
}

std::string synthetic_end_to_end(Check& c) {
  // Monte Carlo oracle (10,000 samples, tests/oracle/synthetic_mc.py)
  const double oracle_zero = 0.963248;
  const double oracle_twenty = 0.988759;
  // one 20-shot run per independently drawn dataset, as in the oracle
  const std::size_t datasets = 30000;

  SyntheticSpec params;
  params.informative = 10;
  params.distractors = 10;
  params.delta = 0.8;
  params.positives = 120;
  params.negatives = 120;
  // per class: 20 fresh training images, then 100 test images
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < 120; ++i) {
    (i < 20 ? train : test).push_back(i);
    (i < 20 ? train : test).push_back(120 + i);
  }
  struct Outcome {
    double zero = 0.0, twenty = 0.0, kept_pos = 0.0, kept_neg = 0.0;
  };
  std::vector<Outcome> out(datasets);
  detail::parallel_for(datasets, std::max(1u, std::thread::hardware_concurrency()), [&](std::size_t d) {
    std::mt19937_64 rng(splitmix64(7000 + d));
    const auto m = generate_synthetic(params, rng);
    NShotConfig cfg;
    cfg.n_values = {20};
    cfg.runs_per_n = 1;
    cfg.base_seed = d;
    const auto res = run_nshot(m, train, test, cfg);
    out[d] = {evaluate_zero_shot(m, test).auc, res.curve[0].mean_auc, res.curve[0].mean_kept_positive,
              res.curve[0].mean_kept_negative};
  });
  Outcome mean;
  for (const auto& o : out) {
    mean.zero += o.zero;
    mean.twenty += o.twenty;
    mean.kept_pos += o.kept_pos;
    mean.kept_neg += o.kept_neg;
  }
  const auto n = static_cast<double>(datasets);
  const double zero = mean.zero / n, twenty = mean.twenty / n;
  const double kept_pos = mean.kept_pos / n, kept_neg = mean.kept_neg / n;
  c.expect(std::fabs(zero - oracle_zero) <= 0.03, "zero-shot AUC " + fmt(zero) + " vs oracle " + fmt(oracle_zero));
  c.expect(std::fabs(twenty - oracle_twenty) <= 0.03, "20-shot AUC " + fmt(twenty) + " vs oracle " + fmt(oracle_twenty));
  c.expect(twenty >= zero, "20-shot AUC below zero-shot AUC");
  c.expect(kept_pos < 0.75 * 20, "mean kept positive " + fmt(kept_pos) + " >= 15");
  c.expect(kept_neg < 0.75 * 20, "mean kept negative " + fmt(kept_neg) + " >= 15");
  return "zero-shot AUC " + fmt(zero) + " (oracle " + fmt(oracle_zero) + "), 20-shot AUC " + fmt(twenty) +
         " (oracle " + fmt(oracle_twenty) + "), kept per class " + fmt(kept_pos) + "/" + fmt(kept_neg) + " of 20, " +
         std::to_string(datasets) + " datasets";
}

std::string determinism(Check& c) {
  const fs::path dir = fs::temp_directory_path() / "descsel_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SyntheticSpec params;
  params.positives = 60;
  params.negatives = 60;
  std::mt19937_64 rng(808);
  const auto m = generate_synthetic(params, rng);
  detail::write_file(dir / "m.csv", format_similarity_matrix(m));
  std::string train, test;
  for (std::size_t i = 0; i < 60; ++i) {
    (i < 30 ? train : test) += m.image_ids()[i] + "\n" + m.image_ids()[60 + i] + "\n";
  }
  detail::write_file(dir / "train.txt", train);
  detail::write_file(dir / "test.txt", test);

  const auto run = [&](const std::string& tag, int threads) {
    std::ostringstream cmd;
    cmd << '"' << DESCSEL_CLI_PATH << "\" nshot --matrix \"" << (dir / "m.csv").string() << "\" --train-ids \""
        << (dir / "train.txt").string() << "\" --test-ids \"" << (dir / "test.txt").string()
        << "\" --n 1 --n 5 --n 20 --runs 100 --sampling with_replacement --seed 7 --threads " << threads
        << " --out \"" << (dir / (tag + ".json")).string() << "\" --curve-out \""
        << (dir / (tag + ".csv")).string() << '"';
    const int rc = std::system(cmd.str().c_str());
    c.expect(rc == 0, "CLI exited with " + std::to_string(rc) + " for " + tag);
    return detail::read_file(dir / (tag + ".json")) + detail::read_file(dir / (tag + ".csv"));
  };
  const unsigned many = std::max(4u, std::thread::hardware_concurrency());
  const auto a = run("first", 1);
  const auto b = run("second", 1);
  const auto p = run("parallel", static_cast<int>(many));
  c.expect(!a.empty() && a == b, "two --seed 7 runs differ");
  c.expect(a == p, "1-thread and " + std::to_string(many) + "-thread outputs differ");
  fs::remove_all(dir);
  return "nshot --seed 7 twice and with 1 vs " + std::to_string(many) + " threads, " + std::to_string(a.size()) +
         " bytes compared";
}

std::string variability_degenerate(Check& c) {
  SyntheticSpec params;
  params.positives = 50;
  params.negatives = 50;
  std::mt19937_64 rng(909);
  const auto m = generate_synthetic(params, rng);
  const auto same = run_variability({m, m, m, m});
  c.expect(std::fabs(same.icc - 1.0) <= 1e-12, "identical runs ICC " + fmt(same.icc));
  c.expect(same.min_auc == same.max_auc && same.ensemble_auc == same.min_auc && same.mean_auc == same.min_auc,
           "identical runs AUC summary differs");

  auto v = m.values();
  for (auto& x : v) x *= 2.0;
  const SimilarityMatrix doubled(m.image_ids(), m.labels(), m.keys(), v);
  const auto scaled = run_variability({m, doubled});
  c.expect(scaled.per_set_auc[0] == scaled.per_set_auc[1], "scale-by-2 run changes AUC");
  c.expect(scaled.ensemble_auc == scaled.per_set_auc[0], "scale-by-2 ensemble AUC differs");
  return "identical runs ICC = " + fmt(same.icc) + " (tol 1e-12), AUC " + fmt(same.min_auc) +
         "; scaled run AUC " + fmt(scaled.per_set_auc[1]);
}

}  // namespace

int main() {
  criterion("equation oracles", 10.0, equation_oracles);
  criterion("degeneration identity", 0.0, degeneration);
  criterion("AUC correctness", 5.0, auc_correctness);
  criterion("cut-off optimality", 0.0, cutoff_optimality);
  criterion("Spearman and ICC", 0.0, spearman_icc);
  criterion("shape suite", 5.0, shape_suite);
  criterion("synthetic end-to-end", 60.0, synthetic_end_to_end);
  criterion("determinism", 0.0, determinism);
  criterion("variability degenerate cases", 0.0, variability_degenerate);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}

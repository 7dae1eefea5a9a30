#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "madood/metrics.hpp"

using namespace madood;

namespace {

std::vector<ScoredSample> make(const std::vector<double>& id, const std::vector<double>& ood) {
  std::vector<ScoredSample> out;
  int n = 0;
  for (double s : id) {
    ScoredSample x;
    x.id = "s" + std::to_string(1000 + n++);
    x.score = s;
    x.is_id = true;
    out.push_back(x);
  }
  for (double s : ood) {
    ScoredSample x;
    x.id = "s" + std::to_string(1000 + n++);
    x.score = s;
    x.is_id = false;
    out.push_back(x);
  }
  return out;
}

std::vector<ScoredSample> random_samples(int n, std::uint64_t seed, int levels = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<ScoredSample> out;
  for (int i = 0; i < n; ++i) {
    ScoredSample s;
    s.id = "r" + std::to_string(rng() % 1000) + "_" + std::to_string(i);
    s.is_id = i < 2 || (i >= 4 && rng() % 2 == 0);
    if (i == 2 || i == 3) s.is_id = false;
    double v = g(rng) + (s.is_id ? 0.8 : 0.0);
    if (levels > 0) v = std::round(v * levels) / levels;
    s.score = v;
    out.push_back(s);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

double auroc_oracle(const std::vector<ScoredSample>& s) {
  double num = 0;
  double pairs = 0;
  for (const auto& a : s)
    for (const auto& b : s)
      if (a.is_id && !b.is_id) {
        pairs += 1;
        num += a.score > b.score ? 1.0 : a.score == b.score ? 0.5 : 0.0;
      }
  return num / pairs;
}

double ap_oracle(std::vector<ScoredSample> s, Positive pos) {
  const double sign = pos == Positive::id ? 1.0 : -1.0;
  std::stable_sort(s.begin(), s.end(), [&](const auto& a, const auto& b) {
    if (sign * a.score != sign * b.score) return sign * a.score > sign * b.score;
    return a.id < b.id;
  });
  auto is_pos = [&](const ScoredSample& x) { return pos == Positive::id ? x.is_id : !x.is_id; };
  const double n_pos = static_cast<double>(std::count_if(s.begin(), s.end(), is_pos));
  // sum over rank cut-offs of (R_n - R_{n-1}) * P_n
  double ap = 0, prev_recall = 0;
  for (std::size_t n = 1; n <= s.size(); ++n) {
    double tp = 0;
    for (std::size_t i = 0; i < n; ++i) tp += is_pos(s[i]);
    const double recall = tp / n_pos, precision = tp / static_cast<double>(n);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

std::vector<double> thresholds(const std::vector<ScoredSample>& s) {
  std::set<double> t;
  for (const auto& x : s) t.insert(x.score);
  t.insert(std::numeric_limits<double>::infinity());
  return {t.begin(), t.end()};
}

std::pair<double, double> rates_at(const std::vector<ScoredSample>& s, double t) {
  double tp = 0, fp = 0, n_id = 0, n_ood = 0;
  for (const auto& x : s) {
    (x.is_id ? n_id : n_ood) += 1;
    if (x.score >= t) (x.is_id ? tp : fp) += 1;
  }
  return {tp / n_id, fp / n_ood};
}

double fpr_at_tpr_oracle(const std::vector<ScoredSample>& s, double target) {
  double best_t = -std::numeric_limits<double>::infinity();
  for (double t : thresholds(s))
    if (rates_at(s, t).first >= target - 1e-12) best_t = std::max(best_t, t);
  return rates_at(s, best_t).second;
}

double tpr_at_fpr_oracle(const std::vector<ScoredSample>& s, double target) {
  double best_t = std::numeric_limits<double>::infinity();
  for (double t : thresholds(s))
    if (rates_at(s, t).second <= target + 1e-12) best_t = std::min(best_t, t);
  return rates_at(s, best_t).first;
}

}  // namespace

TEST_CASE("auroc: examples") {
  CHECK(auroc(make({2, 3}, {0, 1})) == 1.0);
  CHECK(auroc(make({0, 1}, {2, 3})) == 0.0);
  CHECK(auroc(make({1, 1, 1}, {1, 1})) == 0.5);
  CHECK(auroc(make({1, 3}, {2})) == 0.5);
  CHECK_THROWS_AS(auroc(make({1, 2}, {})), InputError);
  CHECK_THROWS_AS(auroc(make({}, {1})), InputError);
}

TEST_CASE("auroc: pairwise oracle, with and without ties") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto s = random_samples(50, seed, seed % 2 ? 2 : 0);
    CHECK(std::abs(auroc(s) - auroc_oracle(s)) <= 1e-12);
  }
}

TEST_CASE("auroc: invariances") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = random_samples(60, seed, 3);
    const double base = auroc(s);
    auto mono = s;
    for (auto& x : mono) x.score = std::exp(2 * x.score) + 5;
    CHECK(std::abs(auroc(mono) - base) <= 1e-12);
    auto flipped = s;
    for (auto& x : flipped) {
      x.score = -x.score;
      x.is_id = !x.is_id;
    }
    CHECK(std::abs(auroc(flipped) - base) <= 1e-12);
  }
}

TEST_CASE("average precision: examples") {
  CHECK(average_precision(make({5, 4}, {1, 0}), Positive::id) == 1.0);
  CHECK(average_precision(make({5, 4}, {1, 0}), Positive::ood) == 1.0);
  for (int n : {1, 2, 5, 17}) {
    std::vector<double> neg;
    for (int i = 0; i < n - 1; ++i) neg.push_back(10.0 + i);
    CHECK(average_precision(make({0.0}, neg), Positive::id) == doctest::Approx(1.0 / n).epsilon(1e-15));
  }
  CHECK_THROWS_AS(average_precision(make({}, {1}), Positive::id), InputError);
  CHECK_THROWS_AS(average_precision(make({1}, {}), Positive::ood), InputError);
}

TEST_CASE("average precision: single positive at rank r is 1/r") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 30; ++t) {
    const int n = 2 + static_cast<int>(rng() % 40);
    const int r = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    std::vector<double> neg;
    for (int i = 0; i < n; ++i)
      if (i != r - 1) neg.push_back(static_cast<double>(n - i));
    auto s = make({static_cast<double>(n - (r - 1))}, neg);
    CHECK(average_precision(s, Positive::id) == doctest::Approx(1.0 / r).epsilon(1e-14));
  }
}

TEST_CASE("average precision: summation oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto s = random_samples(40, seed + 100, seed % 3 ? 0 : 2);
    CHECK(std::abs(average_precision(s, Positive::id) - ap_oracle(s, Positive::id)) <= 1e-12);
    CHECK(std::abs(average_precision(s, Positive::ood) - ap_oracle(s, Positive::ood)) <= 1e-12);
  }
}

TEST_CASE("operating points: examples") {
  CHECK(fpr_at_tpr(make({5, 6, 7}, {1, 2, 3}), 0.95) == 0.0);
  CHECK(tpr_at_fpr(make({5, 6, 7}, {1, 2, 3}), 0.05) == 1.0);
  // target 1: threshold is the lowest ID score
  auto s = make({3, 5, 9}, {1, 3, 4, 10});
  CHECK(fpr_at_tpr(s, 1.0) == 0.75);
  CHECK_THROWS_AS(fpr_at_tpr(s, 0.0), InputError);
  CHECK_THROWS_AS(fpr_at_tpr(s, 1.5), InputError);
  CHECK_THROWS_AS(fpr_at_tpr(make({1}, {}), 0.9), InputError);

  std::vector<double> same;
  for (int i = 0; i < 50; ++i) same.push_back(i * 0.1);
  const double f = fpr_at_tpr(make(same, same), 0.95);
  CHECK(f >= 0.95 - 1.0 / 100);
}

TEST_CASE("operating points: threshold sweep oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto s = random_samples(60, seed + 500, seed % 2 ? 0 : 1);
    for (double target : {0.5, 0.8, 0.95, 1.0})
      CHECK(std::abs(fpr_at_tpr(s, target) - fpr_at_tpr_oracle(s, target)) <= 1e-12);
    for (double target : {0.0, 0.05, 0.2, 0.5})
      CHECK(std::abs(tpr_at_fpr(s, target) - tpr_at_fpr_oracle(s, target)) <= 1e-12);
  }
}

TEST_CASE("confusion matrix") {
  std::vector<std::pair<int, int>> all_right{{0, 0}, {1, 1}, {3, 3}, {2, 2}, {1, 1}};
  auto m = confusion_matrix(all_right, 3);
  CHECK(m.rows() == 4);
  CHECK(m.sum() == 5);
  CHECK(m.trace() == 5);

  std::vector<std::pair<int, int>> one{{2, 0}};
  auto m1 = confusion_matrix(one, 3);
  CHECK(m1(0, 2) == 1);
  CHECK(m1.sum() == 1);

  std::mt19937_64 rng(3);
  std::vector<std::pair<int, int>> pt;
  std::vector<long long> per_class(5, 0);
  for (int i = 0; i < 300; ++i) {
    const int t = static_cast<int>(rng() % 5), p = static_cast<int>(rng() % 5);
    pt.emplace_back(p, t);
    per_class[static_cast<std::size_t>(t)]++;
  }
  auto mr = confusion_matrix(pt, 4);
  for (int c = 0; c < 5; ++c) CHECK(mr.row(c).sum() == per_class[static_cast<std::size_t>(c)]);

  std::vector<std::pair<int, int>> bad{{4, 0}};
  CHECK_THROWS_AS(confusion_matrix(bad, 3), InputError);
}

TEST_CASE("AR-OOD: macro average over families") {
  auto s = make({1, 2}, {0, 0, 0, 0, 0});
  const char* fam[] = {"a", "a", "b", "b", "b"};
  for (int i = 0; i < 5; ++i) {
    s[static_cast<std::size_t>(2 + i)].true_family = fam[i];
    s[static_cast<std::size_t>(2 + i)].flagged_ood = true;
  }
  CHECK(ar_ood(s) == 1.0);
  for (int i = 2; i < 5; ++i) s[static_cast<std::size_t>(2 + i)].flagged_ood = false;
  CHECK(ar_ood(s) == 0.5);
  s[4].flagged_ood = true;
  // recount: a = 2/2, b = 1/3
  CHECK(ar_ood(s) == doctest::Approx((1.0 + 1.0 / 3) / 2).epsilon(1e-15));
  CHECK_THROWS_AS(ar_ood(make({1}, {})), InputError);
}

TEST_CASE("per-family AUC") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u;
  std::vector<ScoredSample> s;
  const char* fams[] = {"x", "y", "z"};
  for (int i = 0; i < 30; ++i) {
    ScoredSample a;
    a.id = std::to_string(i);
    a.true_family = fams[i % 3];
    a.class_probs = Vector(3);
    a.class_probs << u(rng), std::round(u(rng) * 4) / 4, i % 3 == 2 ? 0.9 + u(rng) / 20 : u(rng) / 2;
    s.push_back(a);
  }
  for (int c = 0; c < 3; ++c) {
    std::vector<ScoredSample> relabelled = s;
    for (auto& x : relabelled) {
      x.is_id = x.true_family == fams[c];
      x.score = x.class_probs[c];
    }
    CHECK(std::abs(per_family_auc(s, fams[c], c) - auroc_oracle(relabelled)) <= 1e-12);
  }
  CHECK(per_family_auc(s, "z", 2) == 1.0);
  CHECK_THROWS_AS(per_family_auc(s, "w", 0), InputError);
}

TEST_CASE("evaluate and report formats") {
  auto s = make({0.9, 0.8, 0.7}, {0.1, 0.75});
  const int truth[] = {0, 1, 1, 2, 2};
  const int pred[] = {0, 1, 0, 2, 1};
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i].true_class = truth[i];
    s[i].predicted = pred[i];
    s[i].true_family = i < 3 ? (truth[i] ? "b" : "a") : "ood1";
    s[i].flagged_ood = pred[i] == 2;
    s[i].class_probs = Vector::Constant(3, 1.0 / 3);
    s[i].class_probs[pred[i]] = 0.5;
  }
  auto r = evaluate(s, {"a", "b", "OOD"});
  CHECK(r.acc == 0.6);
  CHECK(r.confusion.sum() == 5);
  CHECK(r.acc == static_cast<double>(r.confusion.trace()) / 5);
  CHECK(r.auroc == auroc_oracle(s));
  CHECK(r.ar_ood == 0.5);
  CHECK(r.per_family_auc.count("a") == 1);
  CHECK(r.per_family_auc.count("OOD") == 1);

  const auto text = format_report(r);
  CHECK(text.rfind("# madood metrics v1\n", 0) == 0);
  for (const char* key : {"auroc = ", "ap_id = ", "ap_ood = ", "fpr_at_tpr95 = ", "tpr_at_fpr05 = ",
                          "ar_ood = ", "acc = "})
    CHECK(text.find(std::string("\n") + key) != std::string::npos);
  CHECK(format_report(r) == text);

  const auto grid = format_confusion(r.confusion, {"a", "b", "OOD"});
  CHECK(grid.rfind("true\\pred\ta\tb\tOOD\n", 0) == 0);

  auto roc = roc_curve(s);
  CHECK(roc.front() == std::pair<double, double>{0.0, 0.0});
  CHECK(roc.back() == std::pair<double, double>{1.0, 1.0});
  CHECK(format_curve(roc).find('\t') != std::string::npos);
}

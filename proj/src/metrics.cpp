#include "madood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace madood {

namespace {

struct Counts {
  std::size_t id = 0;
  std::size_t ood = 0;
};

Counts count_classes(std::span<const ScoredSample> samples) {
  Counts c;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw InputError("non-finite score for sample '" + s.id + "'");
    (s.is_id ? c.id : c.ood) += 1;
  }
  return c;
}

Counts require_both(std::span<const ScoredSample> samples) {
  auto c = count_classes(samples);
  if (c.id == 0 || c.ood == 0) throw InputError("metric needs both ID and OOD samples");
  return c;
}

// Mann-Whitney U via midranks.
double auroc_of(const std::vector<double>& scores, const std::vector<char>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InputError("AUROC needs both classes");
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<std::size_t> ap_ranking(std::span<const ScoredSample> samples, Positive positive) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const double sign = positive == Positive::id ? 1.0 : -1.0;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    const double sa = sign * samples[a].score, sb = sign * samples[b].score;
    if (sa != sb) return sa > sb;
    return samples[a].id < samples[b].id;
  });
  return order;
}

bool is_positive(const ScoredSample& s, Positive positive) {
  return positive == Positive::id ? s.is_id : !s.is_id;
}

}  // namespace

double auroc(std::span<const ScoredSample> samples) {
  require_both(samples);
  std::vector<double> scores;
  std::vector<char> positive;
  for (const auto& s : samples) {
    scores.push_back(s.score);
    positive.push_back(s.is_id);
  }
  return auroc_of(scores, positive);
}

double average_precision(std::span<const ScoredSample> samples, Positive positive) {
  auto c = count_classes(samples);
  const std::size_t n_pos = positive == Positive::id ? c.id : c.ood;
  if (n_pos == 0) throw InputError("average precision needs at least one positive");
  double ap = 0.0;
  std::size_t hits = 0, rank = 0;
  for (auto idx : ap_ranking(samples, positive)) {
    ++rank;
    if (is_positive(samples[idx], positive)) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(rank);
    }
  }
  return ap / static_cast<double>(n_pos);
}

double fpr_at_tpr(std::span<const ScoredSample> samples, double tpr_target) {
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw InputError("TPR target must lie in (0, 1]");
  auto c = require_both(samples);
  std::vector<double> id_scores, ood_scores;
  for (const auto& s : samples) (s.is_id ? id_scores : ood_scores).push_back(s.score);
  std::sort(id_scores.begin(), id_scores.end(), std::greater<>());
  const auto needed = static_cast<std::size_t>(std::ceil(tpr_target * static_cast<double>(c.id) - 1e-9));
  const double threshold = id_scores[std::max<std::size_t>(needed, 1) - 1];
  const auto fp = std::count_if(ood_scores.begin(), ood_scores.end(),
                                [&](double s) { return s >= threshold; });
  return static_cast<double>(fp) / static_cast<double>(c.ood);
}

double tpr_at_fpr(std::span<const ScoredSample> samples, double fpr_target) {
  if (!(fpr_target >= 0.0 && fpr_target <= 1.0)) throw InputError("FPR target must lie in [0, 1]");
  auto c = require_both(samples);
  std::vector<double> id_scores, ood_scores;
  for (const auto& s : samples) (s.is_id ? id_scores : ood_scores).push_back(s.score);
  std::sort(ood_scores.begin(), ood_scores.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(std::floor(fpr_target * static_cast<double>(c.ood) + 1e-9));
  if (allowed >= c.ood) return 1.0;
  // The threshold must sit strictly above the (allowed+1)-th highest OOD score.
  const double bar = ood_scores[allowed];
  const auto tp = std::count_if(id_scores.begin(), id_scores.end(), [&](double s) { return s > bar; });
  return static_cast<double>(tp) / static_cast<double>(c.id);
}

CountMatrix confusion_matrix(std::span<const std::pair<int, int>> predicted_true, int num_classes) {
  if (num_classes < 1) throw InputError("confusion matrix needs K >= 1");
  CountMatrix m = CountMatrix::Zero(num_classes + 1, num_classes + 1);
  for (auto [pred, truth] : predicted_true) {
    if (pred < 0 || pred > num_classes || truth < 0 || truth > num_classes)
      throw InputError("class index out of range in confusion matrix");
    m(truth, pred) += 1;
  }
  return m;
}

double ar_ood(std::span<const ScoredSample> samples) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_family;  // flagged, total
  for (const auto& s : samples) {
    if (s.is_id) continue;
    auto& [flagged, total] = per_family[s.true_family];
    flagged += s.flagged_ood ? 1 : 0;
    ++total;
  }
  if (per_family.empty()) throw InputError("AR-OOD needs OOD samples");
  double sum = 0.0;
  for (const auto& [family, counts] : per_family)
    sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
  return sum / static_cast<double>(per_family.size());
}

double per_family_auc(std::span<const ScoredSample> samples, const std::string& family,
                      int class_index) {
  std::vector<double> scores;
  std::vector<char> positive;
  for (const auto& s : samples) {
    if (class_index < 0 || class_index >= s.class_probs.size())
      throw InputError("sample '" + s.id + "' lacks a probability for class " + std::to_string(class_index));
    scores.push_back(s.class_probs[class_index]);
    positive.push_back(s.true_family == family);
  }
  if (std::find(positive.begin(), positive.end(), 1) == positive.end())
    throw InputError("family '" + family + "' is absent from the test set");
  return auroc_of(scores, positive);
}

double accuracy(std::span<const ScoredSample> samples) {
  if (samples.empty()) return 0.0;
  const auto hits = std::count_if(samples.begin(), samples.end(),
                                  [](const auto& s) { return s.predicted == s.true_class; });
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

std::vector<std::pair<double, double>> roc_curve(std::span<const ScoredSample> samples) {
  auto c = require_both(samples);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return samples[a].score > samples[b].score; });
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && samples[order[j]].score == samples[order[i]].score) {
      (samples[order[j]].is_id ? tp : fp) += 1;
      ++j;
    }
    pts.emplace_back(static_cast<double>(fp) / static_cast<double>(c.ood),
                     static_cast<double>(tp) / static_cast<double>(c.id));
    i = j;
  }
  return pts;
}

std::vector<std::pair<double, double>> pr_curve(std::span<const ScoredSample> samples,
                                                Positive positive) {
  auto c = count_classes(samples);
  const std::size_t n_pos = positive == Positive::id ? c.id : c.ood;
  if (n_pos == 0) throw InputError("PR curve needs at least one positive");
  std::vector<std::pair<double, double>> pts;
  std::size_t hits = 0, rank = 0;
  for (auto idx : ap_ranking(samples, positive)) {
    ++rank;
    hits += is_positive(samples[idx], positive) ? 1 : 0;
    pts.emplace_back(static_cast<double>(hits) / static_cast<double>(n_pos),
                     static_cast<double>(hits) / static_cast<double>(rank));
  }
  return pts;
}

MetricsReport evaluate(std::span<const ScoredSample> samples,
                       const std::vector<std::string>& class_names, const EvalOptions& opt) {
  if (class_names.size() < 2) throw InputError("need K+1 class names");
  const int k = static_cast<int>(class_names.size()) - 1;
  MetricsReport r;
  r.auroc = auroc(samples);
  r.ap_id = average_precision(samples, Positive::id);
  r.ap_ood = average_precision(samples, Positive::ood);
  r.fpr_at_tpr95 = fpr_at_tpr(samples, opt.tpr_target);
  r.tpr_at_fpr05 = tpr_at_fpr(samples, opt.fpr_target);
  r.ar_ood = ar_ood(samples);
  r.acc = accuracy(samples);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& s : samples) pairs.emplace_back(s.predicted, s.true_class);
  r.confusion = confusion_matrix(pairs, k);

  const bool have_probs = std::all_of(samples.begin(), samples.end(),
                                      [&](const auto& s) { return s.class_probs.size() == k + 1; });
  if (have_probs) {
    for (int c = 0; c <= k; ++c) {
      const std::string& name = class_names[static_cast<std::size_t>(c)];
      if (c < k) {
        const bool present = std::any_of(samples.begin(), samples.end(),
                                         [&](const auto& s) { return s.true_family == name; });
        if (present) r.per_family_auc[name] = per_family_auc(samples, name, c);
      } else {
        // OOD column: every OOD sample is positive regardless of its family.
        std::vector<double> scores;
        std::vector<char> positive;
        for (const auto& s : samples) {
          scores.push_back(s.class_probs[k]);
          positive.push_back(!s.is_id);
        }
        r.per_family_auc[name] = auroc_of(scores, positive);
      }
    }
  }
  return r;
}

std::string format_report(const MetricsReport& report) {
  std::map<std::string, std::string> kv;
  kv["auroc"] = format_double(report.auroc);
  kv["ap_id"] = format_double(report.ap_id);
  kv["ap_ood"] = format_double(report.ap_ood);
  kv["fpr_at_tpr95"] = format_double(report.fpr_at_tpr95);
  kv["tpr_at_fpr05"] = format_double(report.tpr_at_fpr05);
  kv["ar_ood"] = format_double(report.ar_ood);
  kv["acc"] = format_double(report.acc);
  kv["test_samples"] = std::to_string(report.confusion.sum());
  for (const auto& [family, auc] : report.per_family_auc) kv["per_family_auc." + family] = format_double(auc);
  for (const auto& [key, value] : report.extra) kv[key] = value;
  std::ostringstream out;
  out << "# madood metrics v1\n";
  for (const auto& [key, value] : kv) out << key << " = " << value << '\n';
  return out.str();
}

std::string format_confusion(const CountMatrix& confusion, const std::vector<std::string>& class_names) {
  if (static_cast<Index>(class_names.size()) != confusion.rows())
    throw InputError("confusion labels do not match its size");
  std::ostringstream out;
  out << "true\\pred";
  for (const auto& name : class_names) out << '\t' << name;
  out << '\n';
  for (Index r = 0; r < confusion.rows(); ++r) {
    out << class_names[static_cast<std::size_t>(r)];
    for (Index c = 0; c < confusion.cols(); ++c) out << '\t' << confusion(r, c);
    out << '\n';
  }
  return out.str();
}

std::string format_curve(const std::vector<std::pair<double, double>>& points) {
  std::ostringstream out;
  for (const auto& [x, y] : points) out << format_double(x) << '\t' << format_double(y) << '\n';
  return out.str();
}

}  // namespace madood

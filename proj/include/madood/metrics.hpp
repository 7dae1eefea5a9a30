#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "madood/common.hpp"

namespace madood {

/// One evaluated test sample. Class indices run 0..K-1 for known families and
/// K stands for "out of distribution" in both `predicted` and `true_class`.
struct ScoredSample {
  std::string id;
  double score = 0.0;  // higher = more in-distribution
  bool is_id = true;
  int predicted = 0;
  int true_class = 0;
  std::string true_family;
  bool flagged_ood = false;
  Vector class_probs;  // optional; needed for per-family AUC
};

/// Mann-Whitney AUROC: P(score_id > score_ood) + 0.5 P(tie).
double auroc(std::span<const ScoredSample> samples);

enum class Positive { id, ood };

/// Step-sum AP over the ranking by descending score (ascending when the
/// positive class is OOD); ties ordered by id.
double average_precision(std::span<const ScoredSample> samples, Positive positive);

/// FPR at the largest threshold whose TPR (ID = positive, predicted ID when
/// score >= threshold) reaches `tpr_target`.
double fpr_at_tpr(std::span<const ScoredSample> samples, double tpr_target = 0.95);

/// TPR at the smallest threshold whose FPR stays within `fpr_target`.
double tpr_at_fpr(std::span<const ScoredSample> samples, double fpr_target = 0.05);

using CountMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

/// (K+1)x(K+1) counts; rows = true class, columns = predicted.
CountMatrix confusion_matrix(std::span<const std::pair<int, int>> predicted_true, int num_classes);

/// Macro-average over OOD families of the fraction flagged OOD.
double ar_ood(std::span<const ScoredSample> samples);

/// AUROC of `family` vs every other sample, scored by class_probs[class_index].
double per_family_auc(std::span<const ScoredSample> samples, const std::string& family,
                      int class_index);

double accuracy(std::span<const ScoredSample> samples);

/// (fpr, tpr) points, one per distinct threshold, from (0,0) to (1,1).
std::vector<std::pair<double, double>> roc_curve(std::span<const ScoredSample> samples);
/// (recall, precision) points along the AP ranking.
std::vector<std::pair<double, double>> pr_curve(std::span<const ScoredSample> samples,
                                                Positive positive);

struct MetricsReport {
  double auroc = 0.0;
  double ap_id = 0.0;
  double ap_ood = 0.0;
  double fpr_at_tpr95 = 0.0;
  double tpr_at_fpr05 = 0.0;
  double ar_ood = 0.0;
  double acc = 0.0;
  CountMatrix confusion;
  std::map<std::string, double> per_family_auc;
  /// Free-form annotations (scorer, policy, interpretation notes, gate-only figures).
  std::map<std::string, std::string> extra;
};

struct EvalOptions {
  double tpr_target = 0.95;
  double fpr_target = 0.05;
};

/// Computes every field from the scored test set. `class_names` has K+1
/// entries, the last one naming the OOD column.
MetricsReport evaluate(std::span<const ScoredSample> samples,
                       const std::vector<std::string>& class_names, const EvalOptions& opt = {});

/// `key = value` lines, keys sorted, values in shortest round-trip form.
std::string format_report(const MetricsReport& report);
/// Labeled grid, tab-separated; first row and column carry class names.
std::string format_confusion(const CountMatrix& confusion, const std::vector<std::string>& class_names);
std::string format_curve(const std::vector<std::pair<double, double>>& points);

}  // namespace madood

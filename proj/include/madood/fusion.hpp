#pragma once

#include <span>
#include <string>
#include <vector>

#include "madood/boundary.hpp"
#include "madood/nncore.hpp"

namespace madood {

/// Gate z-scores are clamped to +-kZClamp before entering the fusion network.
inline constexpr double kZClamp = 10.0;

/// Fusion input = [stage1_probs (K) | zscore_vector (K) | verdict_onehot (K+1) | raw_features (d_in)]
struct FusionLayout {
  int num_classes = 0;
  int feature_dim = 0;

  int input_dim() const { return 2 * num_classes + (num_classes + 1) + feature_dim; }
  int ood_index() const { return num_classes; }
};

struct FusionInput {
  Vector stage1_probs;
  Vector zscore_vector;
  Vector verdict_onehot;
  Vector raw_features;

  Vector concat() const;
};

/// The verdict one-hot: nearest_class when in-distribution, index K otherwise.
Vector verdict_onehot(const OodVerdict<double>& verdict, int num_classes);

FusionInput assemble_fusion_input(const Vector& feature, const MlpModel& stage1,
                                  const BoundarySetd& boundaries, const GateOptions& gate = {});

struct FusionBatch {
  Matrix inputs;  // one fusion vector per row
  Matrix stage1_probs;
  std::vector<OodVerdict<double>> verdicts;
};

/// Row-wise assemble_fusion_input over a feature matrix.
FusionBatch assemble_fusion_batch(const Matrix& features, const MlpModel& stage1,
                                  const BoundarySetd& boundaries, const GateOptions& gate = {});

/// [layout.input_dim(), hidden..., K+1]
MlpConfig fusion_config(const FusionLayout& layout, std::vector<int> hidden = {64},
                        double dropout_rate = 0.0, bool use_batchnorm = true);

/// Records the input layout in the model's checkpoint header.
void stamp_layout(MlpModel& model, const FusionLayout& layout);
/// Reads it back; throws InputError if missing or inconsistent.
FusionLayout read_layout(const MlpModel& model);

/// Trains the (K+1)-way fusion network. Labels are class indices 0..K-1 for
/// in-distribution rows and K for proxy-outlier rows.
TrainResult train_fusion(const FusionLayout& layout, const Matrix& x, std::span<const int> y,
                         const Matrix& x_val, std::span<const int> y_val, const MlpConfig& config,
                         std::uint64_t init_seed, const TrainConfig& train_config);

struct FinalPrediction {
  Vector class_probs;  // K+1, index K = OOD
  int predicted = 0;
  double ood_score = 0.0;
};

FinalPrediction predict_final(const Vector& input, const MlpModel& fusion);
std::vector<FinalPrediction> predict_final(const Matrix& inputs, const MlpModel& fusion);

enum class DecisionPolicy { gate_priority, fusion_priority };

std::string to_string(DecisionPolicy p);
DecisionPolicy parse_policy(std::string_view s);

/// Final class index (K = OOD). fusion_priority takes the fusion argmax;
/// gate_priority returns K whenever the gate rejects and otherwise the best
/// in-distribution class of the fusion output.
int final_decision(const FinalPrediction& fused, const OodVerdict<double>& verdict,
                   DecisionPolicy policy);

}  // namespace madood

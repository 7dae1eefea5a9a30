#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "madood/common.hpp"

namespace madood {

enum class Activation { relu };

struct MlpConfig {
  /// [d_in, h1, ..., h_L, K]
  std::vector<int> layer_dims;
  double dropout_rate = 0.0;
  bool use_batchnorm = true;
  Activation activation = Activation::relu;

  void validate() const;
};

inline constexpr double kBatchNormEps = 1e-5;
/// Weight kept on the old running statistic at each update.
inline constexpr double kBatchNormMomentum = 0.9;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
  // Present on hidden layers when batchnorm is enabled; empty otherwise.
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;

  bool has_batchnorm() const { return gamma.size() > 0; }
};

struct MlpModel {
  MlpConfig config;
  std::uint64_t seed = 0;
  std::vector<DenseLayer> layers;
  /// Free-form header fields carried through checkpoints.
  std::map<std::string, std::string> metadata;

  int input_dim() const { return config.layer_dims.front(); }
  int num_outputs() const { return config.layer_dims.back(); }
  /// Width of the last hidden layer (the input width if there is none).
  int embedding_dim() const { return config.layer_dims[config.layer_dims.size() - 2]; }
  std::size_t num_parameters() const;
};

/// He-style init: weights ~ N(0, 2/h_in), zero biases, gamma 1, beta 0.
MlpModel init_model(const MlpConfig& config, std::uint64_t seed);

enum class Mode { train, eval };

struct LayerCache {
  Matrix input;     // activations entering the affine map
  Matrix xhat;      // normalized pre-activations (batchnorm only)
  Vector inv_std;   // 1/sqrt(var + eps) used for xhat
  Vector batch_mean;
  Vector batch_var;
  Matrix pre_relu;  // after affine (+ batchnorm)
  Matrix mask;      // dropout multipliers, empty when no dropout
};

struct ForwardResult {
  Matrix logits;
  /// Last hidden activations after the nonlinearity, before dropout.
  Matrix embedding;
  std::vector<LayerCache> cache;  // one per hidden layer
  Matrix last_input;              // input of the output layer
};

/// Train mode uses batch statistics and a dropout mask drawn from `seed`;
/// eval mode uses running statistics and no dropout. Never mutates the model.
ForwardResult forward(const MlpModel& model, const Matrix& batch, Mode mode,
                      std::uint64_t seed = 0);

/// Folds the batch statistics of a train-mode pass into the running averages.
void update_running_stats(MlpModel& model, const ForwardResult& pass);

struct LayerGrad {
  Matrix weight;
  Vector bias;
  Vector gamma;
  Vector beta;
};
using Gradients = std::vector<LayerGrad>;

Gradients backward(const MlpModel& model, const ForwardResult& pass, const Matrix& dlogits);

/// Learnable parameters in a fixed order: per layer weight, bias, gamma, beta.
std::vector<std::span<double>> parameter_views(MlpModel& model);
std::vector<std::span<double>> parameter_views(Gradients& grads);

Matrix softmax(const Matrix& logits);

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

enum class Optimizer { sgd, adam };

struct LrSchedule {
  enum class Kind { constant, step_decay } kind = Kind::step_decay;
  double factor = 0.5;
  int every_n_epochs = 10;
};

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double base_lr = 1e-3;
  LrSchedule schedule;
  int epochs = 30;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum = 0.0;  // sgd only
  std::uint64_t seed = 0;

  void validate() const;
};

/// Learning rate in effect during `epoch` (1-based).
double learning_rate(const TrainConfig& config, int epoch);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_val_accuracy = 0.0;
};

struct TrainResult {
  MlpModel model;
  TrainReport report;
};

/// Mini-batch training; returns the model from the epoch with the best
/// validation accuracy (earliest on ties, last epoch if there is no val set).
TrainResult train(MlpModel model, const Matrix& x, std::span<const int> y, const Matrix& x_val,
                  std::span<const int> y_val, const TrainConfig& config);

/// Eval-mode class probabilities, one row per sample.
Matrix predict_proba(const MlpModel& model, const Matrix& batch);
Matrix embed(const MlpModel& model, const Matrix& batch);
Vector embed(const MlpModel& model, const Vector& feature);
/// Output-layer affine map applied to embeddings.
Matrix logits_from_embedding(const MlpModel& model, const Matrix& embedding);

double accuracy(const Matrix& logits, std::span<const int> labels);

/// Worst relative error between analytic and central-difference gradients over
/// every learnable parameter, in train mode with the dropout mask fixed by
/// `mask_seed`. Error per entry is |a - n| / max(|a|, |n|, 1e-6).
double grad_check(const MlpModel& model, const Matrix& batch, std::span<const int> labels,
                  double epsilon, std::uint64_t mask_seed = 0);

// Checkpoints; layout documented in docs/checkpoint_format.md.
std::string serialize_checkpoint(const MlpModel& model);
MlpModel deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const MlpModel& model);
MlpModel load_checkpoint(const std::filesystem::path& path);

}  // namespace madood

#include "madood/fusion.hpp"

#include <set>

namespace madood {

namespace {
constexpr const char* kFieldOrder = "stage1_probs,zscore_vector,verdict_onehot,raw_features";
}

Vector FusionInput::concat() const {
  Vector out(stage1_probs.size() + zscore_vector.size() + verdict_onehot.size() + raw_features.size());
  out << stage1_probs, zscore_vector, verdict_onehot, raw_features;
  return out;
}

Vector verdict_onehot(const OodVerdict<double>& verdict, int num_classes) {
  Vector v = Vector::Zero(num_classes + 1);
  v[verdict.in_distribution() ? verdict.nearest_class : num_classes] = 1.0;
  return v;
}

FusionBatch assemble_fusion_batch(const Matrix& features, const MlpModel& stage1,
                                  const BoundarySetd& boundaries, const GateOptions& gate) {
  const int k = boundaries.num_classes();
  if (features.cols() != stage1.input_dim())
    throw InputError("stage-1: features have " + std::to_string(features.cols()) +
                     " columns, model expects " + std::to_string(stage1.input_dim()));
  if (stage1.num_outputs() != k)
    throw InputError("stage-1: model has " + std::to_string(stage1.num_outputs()) +
                     " outputs but there are " + std::to_string(k) + " boundaries");
  if (stage1.embedding_dim() != boundaries.embedding_dim)
    throw InputError("boundary: embedding width " + std::to_string(stage1.embedding_dim()) +
                     " does not match boundary dim " + std::to_string(boundaries.embedding_dim));

  auto pass = forward(stage1, features, Mode::eval);
  FusionBatch out;
  out.stage1_probs = softmax(pass.logits);
  const FusionLayout layout{k, static_cast<int>(features.cols())};
  out.inputs.resize(features.rows(), layout.input_dim());
  for (Index i = 0; i < features.rows(); ++i) {
    auto verdict = classify_sample(pass.embedding.row(i), boundaries, gate);
    out.inputs.row(i) << out.stage1_probs.row(i),
        verdict.z_scores.cwiseMax(-kZClamp).cwiseMin(kZClamp).transpose(),
        verdict_onehot(verdict, k).transpose(), features.row(i);
    out.verdicts.push_back(std::move(verdict));
  }
  return out;
}

FusionInput assemble_fusion_input(const Vector& feature, const MlpModel& stage1,
                                  const BoundarySetd& boundaries, const GateOptions& gate) {
  auto batch = assemble_fusion_batch(Matrix(feature.transpose()), stage1, boundaries, gate);
  const int k = boundaries.num_classes();
  FusionInput in;
  const Vector row = batch.inputs.row(0).transpose();
  in.stage1_probs = row.segment(0, k);
  in.zscore_vector = row.segment(k, k);
  in.verdict_onehot = row.segment(2 * k, k + 1);
  in.raw_features = row.tail(feature.size());
  return in;
}

MlpConfig fusion_config(const FusionLayout& layout, std::vector<int> hidden, double dropout_rate,
                        bool use_batchnorm) {
  MlpConfig c;
  c.layer_dims.push_back(layout.input_dim());
  for (int h : hidden) c.layer_dims.push_back(h);
  c.layer_dims.push_back(layout.num_classes + 1);
  c.dropout_rate = dropout_rate;
  c.use_batchnorm = use_batchnorm;
  c.validate();
  return c;
}

void stamp_layout(MlpModel& model, const FusionLayout& layout) {
  model.metadata["fusion.K"] = std::to_string(layout.num_classes);
  model.metadata["fusion.d_in"] = std::to_string(layout.feature_dim);
  model.metadata["fusion.fields"] = kFieldOrder;
}

FusionLayout read_layout(const MlpModel& model) {
  auto get = [&](const std::string& key) {
    auto it = model.metadata.find(key);
    if (it == model.metadata.end())
      throw InputError("fusion checkpoint header lacks '" + key + "'");
    return it->second;
  };
  if (get("fusion.fields") != kFieldOrder)
    throw InputError(std::string("fusion field order mismatch: expected '") + kFieldOrder +
                     "', found '" + get("fusion.fields") + "'");
  FusionLayout layout{static_cast<int>(parse_int(get("fusion.K"))),
                      static_cast<int>(parse_int(get("fusion.d_in")))};
  if (layout.input_dim() != model.input_dim() || layout.num_classes + 1 != model.num_outputs())
    throw InputError("fusion header layout does not match the network shape");
  return layout;
}

TrainResult train_fusion(const FusionLayout& layout, const Matrix& x, std::span<const int> y,
                         const Matrix& x_val, std::span<const int> y_val, const MlpConfig& config,
                         std::uint64_t init_seed, const TrainConfig& train_config) {
  if (config.layer_dims.front() != layout.input_dim() ||
      config.layer_dims.back() != layout.num_classes + 1)
    throw InputError("fusion network shape does not match the input layout");
  std::set<int> classes(y.begin(), y.end());
  if (classes.size() < 2) throw InputError("fusion training labels must cover at least 2 classes");
  MlpModel model = init_model(config, init_seed);
  stamp_layout(model, layout);
  return train(std::move(model), x, y, x_val, y_val, train_config);
}

FinalPrediction predict_final(const Vector& input, const MlpModel& fusion) {
  return predict_final(Matrix(input.transpose()), fusion).front();
}

std::vector<FinalPrediction> predict_final(const Matrix& inputs, const MlpModel& fusion) {
  if (inputs.cols() != fusion.input_dim())
    throw InputError("fusion input has " + std::to_string(inputs.cols()) + " values, model expects " +
                     std::to_string(fusion.input_dim()));
  const Matrix probs = predict_proba(fusion, inputs);
  std::vector<FinalPrediction> out;
  out.reserve(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    FinalPrediction p;
    p.class_probs = probs.row(i).transpose();
    Index arg = 0;
    for (Index j = 1; j < p.class_probs.size(); ++j)
      if (p.class_probs[j] > p.class_probs[arg]) arg = j;
    p.predicted = static_cast<int>(arg);
    p.ood_score = p.class_probs[p.class_probs.size() - 1];
    out.push_back(std::move(p));
  }
  return out;
}

std::string to_string(DecisionPolicy p) {
  return p == DecisionPolicy::gate_priority ? "gate_priority" : "fusion_priority";
}

DecisionPolicy parse_policy(std::string_view s) {
  if (s == "gate_priority") return DecisionPolicy::gate_priority;
  if (s == "fusion_priority") return DecisionPolicy::fusion_priority;
  throw InputError("unknown policy '" + std::string(s) + "'");
}

int final_decision(const FinalPrediction& fused, const OodVerdict<double>& verdict,
                   DecisionPolicy policy) {
  const auto k = static_cast<int>(fused.class_probs.size()) - 1;
  if (policy == DecisionPolicy::fusion_priority) return fused.predicted;
  if (!verdict.in_distribution()) return k;
  Index arg = 0;
  for (Index j = 1; j < k; ++j)
    if (fused.class_probs[j] > fused.class_probs[arg]) arg = j;
  return static_cast<int>(arg);
}

}  // namespace madood

#include "madood/nncore.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace madood {

void MlpConfig::validate() const {
  if (layer_dims.size() < 2) throw InputError("layer_dims needs at least 2 entries");
  for (int d : layer_dims)
    if (d < 1) throw InputError("layer dims must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw InputError("dropout_rate must be in [0, 1)");
}

std::size_t MlpModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size() + l.gamma.size() + l.beta.size());
  return n;
}

MlpModel init_model(const MlpConfig& config, std::uint64_t seed) {
  config.validate();
  MlpModel model;
  model.config = config;
  model.seed = seed;
  std::mt19937_64 rng(derive_seed(seed, "init"));
  const auto n_layers = config.layer_dims.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = config.layer_dims[l];
    const int out = config.layer_dims[l + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / in));
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = normal(rng);
    layer.bias = Vector::Zero(out);
    const bool hidden = l + 1 < n_layers;
    if (hidden && config.use_batchnorm) {
      layer.gamma = Vector::Ones(out);
      layer.beta = Vector::Zero(out);
      layer.running_mean = Vector::Zero(out);
      layer.running_var = Vector::Ones(out);
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

// ---------------------------------------------------------------------------
// forward / backward

ForwardResult forward(const MlpModel& model, const Matrix& batch, Mode mode, std::uint64_t seed) {
  if (batch.cols() != model.input_dim())
    throw InputError("input has " + std::to_string(batch.cols()) + " columns, model expects " +
                     std::to_string(model.input_dim()));
  const double p = model.config.dropout_rate;
  const bool dropout = mode == Mode::train && p > 0.0;

  ForwardResult out;
  Matrix a = batch;
  const auto n_hidden = model.layers.size() - 1;
  out.cache.resize(n_hidden);
  for (std::size_t l = 0; l < n_hidden; ++l) {
    const auto& layer = model.layers[l];
    auto& c = out.cache[l];
    c.input = a;
    Matrix z = (a * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    if (layer.has_batchnorm()) {
      if (mode == Mode::train) {
        c.batch_mean = z.colwise().mean().transpose();
        c.batch_var = (z.rowwise() - c.batch_mean.transpose()).array().square().colwise().mean().transpose();
        c.inv_std = (c.batch_var.array() + kBatchNormEps).rsqrt();
        c.xhat = (z.rowwise() - c.batch_mean.transpose()).array().rowwise() * c.inv_std.transpose().array();
      } else {
        c.inv_std = (layer.running_var.array() + kBatchNormEps).rsqrt();
        c.xhat = (z.rowwise() - layer.running_mean.transpose()).array().rowwise() * c.inv_std.transpose().array();
      }
      z = (c.xhat.array().rowwise() * layer.gamma.transpose().array()).rowwise() +
          layer.beta.transpose().array();
    }
    c.pre_relu = z;
    a = z.cwiseMax(0.0);
    if (l + 1 == n_hidden) out.embedding = a;
    if (dropout) {
      std::mt19937_64 rng(derive_seed(seed, l, 0xd50ULL));
      std::bernoulli_distribution keep(1.0 - p);
      c.mask.resize(a.rows(), a.cols());
      const double scale = 1.0 / (1.0 - p);
      for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) c.mask(i, j) = keep(rng) ? scale : 0.0;
      a = a.cwiseProduct(c.mask);
    }
  }
  if (n_hidden == 0) out.embedding = batch;
  const auto& last = model.layers.back();
  out.last_input = a;
  out.logits = (a * last.weight.transpose()).rowwise() + last.bias.transpose();
  return out;
}

void update_running_stats(MlpModel& model, const ForwardResult& pass) {
  for (std::size_t l = 0; l < pass.cache.size(); ++l) {
    auto& layer = model.layers[l];
    const auto& c = pass.cache[l];
    if (!layer.has_batchnorm() || c.batch_mean.size() == 0) continue;
    layer.running_mean = kBatchNormMomentum * layer.running_mean + (1.0 - kBatchNormMomentum) * c.batch_mean;
    layer.running_var = kBatchNormMomentum * layer.running_var + (1.0 - kBatchNormMomentum) * c.batch_var;
  }
}

Gradients backward(const MlpModel& model, const ForwardResult& pass, const Matrix& dlogits) {
  Gradients grads(model.layers.size());
  const auto& last = model.layers.back();
  auto& gl = grads.back();
  gl.weight = dlogits.transpose() * pass.last_input;
  gl.bias = dlogits.colwise().sum().transpose();
  Matrix da = dlogits * last.weight;

  for (std::size_t l = pass.cache.size(); l-- > 0;) {
    const auto& layer = model.layers[l];
    const auto& c = pass.cache[l];
    auto& g = grads[l];
    if (c.mask.size() > 0) da = da.cwiseProduct(c.mask);
    Matrix dz = (c.pre_relu.array() > 0.0).select(da, 0.0);
    if (layer.has_batchnorm()) {
      g.gamma = (dz.cwiseProduct(c.xhat)).colwise().sum().transpose();
      g.beta = dz.colwise().sum().transpose();
      Matrix dxhat = dz.array().rowwise() * layer.gamma.transpose().array();
      if (c.batch_mean.size() > 0) {
        const double n = static_cast<double>(dz.rows());
        RowVector sum_dxhat = dxhat.colwise().sum();
        RowVector sum_dxhat_xhat = dxhat.cwiseProduct(c.xhat).colwise().sum();
        Matrix centered = (n * dxhat).rowwise() - sum_dxhat;
        centered -= (c.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
        dz = (centered.array().rowwise() * (c.inv_std.transpose().array() / n)).matrix();
      } else {
        dz = dxhat.array().rowwise() * c.inv_std.transpose().array();
      }
    }
    g.weight = dz.transpose() * c.input;
    g.bias = dz.colwise().sum().transpose();
    if (l > 0) da = dz * layer.weight;
  }
  return grads;
}

namespace {

template <typename Layers>
std::vector<std::span<double>> views_of(Layers& layers) {
  std::vector<std::span<double>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    for (auto* v : {&l.bias, &l.gamma, &l.beta})
      if (v->size() > 0) out.emplace_back(v->data(), static_cast<std::size_t>(v->size()));
  }
  return out;
}

}  // namespace

std::vector<std::span<double>> parameter_views(MlpModel& model) { return views_of(model.layers); }
std::vector<std::span<double>> parameter_views(Gradients& grads) { return views_of(grads); }

Matrix softmax(const Matrix& logits) {
  Matrix shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Matrix e = shifted.array().exp();
  return e.array().colwise() / e.rowwise().sum().array();
}

LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  const Index k = logits.cols();
  if (k < 2) throw InputError("cross-entropy needs at least 2 classes");
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw InputError("label count does not match batch size");
  const Index n = logits.rows();
  LossResult out;
  Matrix shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Vector log_norm = shifted.array().exp().rowwise().sum().log();
  out.dlogits = shifted.array().exp().colwise() / log_norm.array().exp();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw InputError("label " + std::to_string(y) + " out of range");
    total += log_norm[i] - shifted(i, y);
    out.dlogits(i, y) -= 1.0;
  }
  out.loss = n > 0 ? total / static_cast<double>(n) : 0.0;
  if (n > 0) out.dlogits /= static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// training

void TrainConfig::validate() const {
  if (epochs < 0) throw InputError("epochs must be >= 0");
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (!(base_lr >= 0.0)) throw InputError("learning rate must be >= 0");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
    throw InputError("adam betas must lie in (0, 1)");
  if (schedule.kind == LrSchedule::Kind::step_decay && schedule.every_n_epochs < 1)
    throw InputError("step decay period must be >= 1");
}

double learning_rate(const TrainConfig& config, int epoch) {
  if (config.schedule.kind == LrSchedule::Kind::constant) return config.base_lr;
  const int steps = (epoch - 1) / config.schedule.every_n_epochs;
  return config.base_lr * std::pow(config.schedule.factor, steps);
}

double accuracy(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) return 0.0;
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

namespace {

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(idx[i]));
  return out;
}

class ParameterUpdater {
 public:
  ParameterUpdater(const TrainConfig& config, MlpModel& model) : config_(config) {
    for (auto v : parameter_views(model)) {
      first_.emplace_back(v.size(), 0.0);
      second_.emplace_back(config.optimizer == Optimizer::adam ? v.size() : 0, 0.0);
    }
  }

  void step(MlpModel& model, Gradients& grads, double lr) {
    ++t_;
    auto params = parameter_views(model);
    auto gviews = parameter_views(grads);
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i];
      auto g = gviews[i];
      auto& m = first_[i];
      if (config_.optimizer == Optimizer::adam) {
        auto& v = second_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
          m[j] = b1 * m[j] + (1.0 - b1) * g[j];
          v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
          p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.adam_eps);
        }
      } else {
        for (std::size_t j = 0; j < p.size(); ++j) {
          m[j] = config_.momentum * m[j] + g[j];
          p[j] -= lr * m[j];
        }
      }
    }
  }

 private:
  const TrainConfig& config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long long t_ = 0;
};

}  // namespace

TrainResult train(MlpModel model, const Matrix& x, std::span<const int> y, const Matrix& x_val,
                  std::span<const int> y_val, const TrainConfig& config) {
  config.validate();
  if (x.rows() != static_cast<Index>(y.size())) throw InputError("train labels do not match rows");
  if (x_val.rows() != static_cast<Index>(y_val.size()))
    throw InputError("val labels do not match rows");
  if (x.rows() == 0 && config.epochs > 0) throw InputError("empty training set");
  const int k = model.num_outputs();
  std::vector<int> per_class(static_cast<std::size_t>(k), 0);
  for (int label : y) {
    if (label < 0 || label >= k) throw InputError("label " + std::to_string(label) + " out of range");
    ++per_class[static_cast<std::size_t>(label)];
  }

  TrainResult result{model, {}};
  ParameterUpdater updater(config, model);
  std::mt19937_64 order_rng(derive_seed(config.seed, "batch-order"));
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  const bool have_val = x_val.rows() > 0;
  double best_acc = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(order_rng)]);
    }
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix xb = gather_rows(x, idx);
      std::vector<int> yb;
      for (auto i : idx) yb.push_back(y[i]);
      auto pass = forward(model, xb, Mode::train, derive_seed(config.seed, static_cast<std::uint64_t>(epoch), batch_index));
      auto loss = cross_entropy_loss(pass.logits, yb);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batch_index;
        throw Error(msg.str());
      }
      loss_sum += loss.loss * static_cast<double>(idx.size());
      auto grads = backward(model, pass, loss.dlogits);
      updater.step(model, grads, lr);
      update_running_stats(model, pass);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    if (have_val) {
      auto val = forward(model, x_val, Mode::eval);
      stats.val_loss = cross_entropy_loss(val.logits, y_val).loss;
      stats.val_accuracy = accuracy(val.logits, y_val);
    }
    result.report.epochs.push_back(stats);
    if (!have_val || stats.val_accuracy > best_acc) {
      best_acc = stats.val_accuracy;
      result.model = model;
      result.report.best_epoch = epoch;
      result.report.best_val_accuracy = stats.val_accuracy;
    }
  }
  return result;
}

Matrix predict_proba(const MlpModel& model, const Matrix& batch) {
  return softmax(forward(model, batch, Mode::eval).logits);
}

Matrix embed(const MlpModel& model, const Matrix& batch) {
  return forward(model, batch, Mode::eval).embedding;
}

Vector embed(const MlpModel& model, const Vector& feature) {
  return embed(model, Matrix(feature.transpose())).row(0).transpose();
}

Matrix logits_from_embedding(const MlpModel& model, const Matrix& embedding) {
  const auto& last = model.layers.back();
  if (embedding.cols() != last.weight.cols())
    throw InputError("embedding width does not match the output layer");
  return (embedding * last.weight.transpose()).rowwise() + last.bias.transpose();
}

// ---------------------------------------------------------------------------
// gradient check

double grad_check(const MlpModel& model, const Matrix& batch, std::span<const int> labels,
                  double epsilon, std::uint64_t mask_seed) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw InputError("epsilon must lie in [1e-7, 1e-3]");
  auto loss_of = [&](const MlpModel& m) {
    return cross_entropy_loss(forward(m, batch, Mode::train, mask_seed).logits, labels).loss;
  };
  auto pass = forward(model, batch, Mode::train, mask_seed);
  auto grads = backward(model, pass, cross_entropy_loss(pass.logits, labels).dlogits);

  MlpModel probe = model;
  auto params = parameter_views(probe);
  auto analytic = parameter_views(grads);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double saved = params[i][j];
      params[i][j] = saved + epsilon;
      const double up = loss_of(probe);
      params[i][j] = saved - epsilon;
      const double down = loss_of(probe);
      params[i][j] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace madood

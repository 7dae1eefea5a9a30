#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "madood/nncore.hpp"

namespace madood {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'D', 'O', 'O', 'D', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string str() { return std::string(bytes(u32())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw InputError("checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const std::string& name, const Matrix& m) {
  w.str(name);
  w.u32(2);
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

void put_tensor(Writer& w, const std::string& name, const Vector& v) {
  w.str(name);
  w.u32(1);
  w.u64(static_cast<std::uint64_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) w.f64(v[i]);
}

std::string header_text(const MlpModel& model) {
  std::ostringstream h;
  h << "activation=relu\n";
  h << "dropout_rate=" << format_double(model.config.dropout_rate) << '\n';
  h << "layer_dims=";
  for (std::size_t i = 0; i < model.config.layer_dims.size(); ++i)
    h << (i ? "," : "") << model.config.layer_dims[i];
  h << '\n';
  h << "seed=" << model.seed << '\n';
  h << "use_batchnorm=" << (model.config.use_batchnorm ? 1 : 0) << '\n';
  for (const auto& [k, v] : model.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw InputError("checkpoint metadata key/value contains a reserved character");
    h << "meta." << k << '=' << v << '\n';
  }
  return h.str();
}

}  // namespace

std::string serialize_checkpoint(const MlpModel& model) {
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(kFormatVersion);
  w.str(header_text(model));

  std::uint32_t count = 0;
  for (const auto& l : model.layers) count += l.has_batchnorm() ? 6 : 2;
  w.u32(count);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    put_tensor(w, p + "weight", l.weight);
    put_tensor(w, p + "bias", l.bias);
    if (l.has_batchnorm()) {
      put_tensor(w, p + "gamma", l.gamma);
      put_tensor(w, p + "beta", l.beta);
      put_tensor(w, p + "running_mean", l.running_mean);
      put_tensor(w, p + "running_var", l.running_var);
    }
  }
  return w.take();
}

MlpModel deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic)))
    throw InputError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kFormatVersion)
    throw InputError("checkpoint format version mismatch: expected " +
                     std::to_string(kFormatVersion) + ", found " + std::to_string(version));

  MlpConfig config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;
  std::istringstream header(r.str());
  std::string line;
  while (std::getline(header, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    if (key == "layer_dims") {
      for (const auto& d : split(value, ',')) config.layer_dims.push_back(static_cast<int>(parse_int(d)));
    } else if (key == "dropout_rate") {
      config.dropout_rate = parse_double(value);
    } else if (key == "use_batchnorm") {
      config.use_batchnorm = value == "1";
    } else if (key == "seed") {
      seed = parse_uint(value);
    } else if (key == "activation") {
      if (value != "relu") throw InputError("unsupported activation '" + value + "'");
    } else if (key.rfind("meta.", 0) == 0) {
      metadata[key.substr(5)] = value;
    }
  }
  config.validate();

  MlpModel model = init_model(config, seed);
  model.metadata = std::move(metadata);

  const auto count = r.u32();
  std::uint32_t expected = 0;
  for (const auto& l : model.layers) expected += l.has_batchnorm() ? 6 : 2;
  if (count != expected) throw InputError("checkpoint tensor count does not match its config");

  auto read_into = [&](const std::string& name, auto& target) {
    if (r.str() != name) throw InputError("checkpoint tensor order broken at '" + name + "'");
    const auto ndim = r.u32();
    std::vector<std::uint64_t> dims(ndim);
    for (auto& d : dims) d = r.u64();
    using T = std::decay_t<decltype(target)>;
    if constexpr (std::is_same_v<T, Matrix>) {
      if (ndim != 2 || dims[0] != static_cast<std::uint64_t>(target.rows()) ||
          dims[1] != static_cast<std::uint64_t>(target.cols()))
        throw InputError("checkpoint tensor '" + name + "' has the wrong shape");
      for (Index i = 0; i < target.rows(); ++i)
        for (Index j = 0; j < target.cols(); ++j) target(i, j) = r.f64();
    } else {
      if (ndim != 1 || dims[0] != static_cast<std::uint64_t>(target.size()))
        throw InputError("checkpoint tensor '" + name + "' has the wrong shape");
      for (Index i = 0; i < target.size(); ++i) target[i] = r.f64();
    }
  };
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& l = model.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    read_into(p + "weight", l.weight);
    read_into(p + "bias", l.bias);
    if (l.has_batchnorm()) {
      read_into(p + "gamma", l.gamma);
      read_into(p + "beta", l.beta);
      read_into(p + "running_mean", l.running_mean);
      read_into(p + "running_var", l.running_var);
    }
  }
  if (!r.done()) throw InputError("trailing bytes after checkpoint tensors");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const MlpModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  const auto bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

MlpModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace madood

#include "madood/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace madood {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  if (trim(s).empty()) return out;
  for (const auto& p : split(s, ',')) out.push_back(static_cast<int>(parse_int(p)));
  return out;
}

std::vector<std::string> parse_strings(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (const auto& p : split(s, ',')) out.emplace_back(trim(p));
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InputError("not a boolean: '" + s + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

struct Key {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

void add_train_keys(std::map<std::string, Key>& keys, const std::string& section,
                    TrainConfig RunConfig::*member) {
  keys[section + ".optimizer"] = {
      [member](RunConfig& c, const std::string& v) {
        if (v == "adam") (c.*member).optimizer = Optimizer::adam;
        else if (v == "sgd") (c.*member).optimizer = Optimizer::sgd;
        else throw InputError("optimizer must be adam or sgd");
      },
      [member](const RunConfig& c) { return std::string((c.*member).optimizer == Optimizer::adam ? "adam" : "sgd"); }};
  keys[section + ".lr"] = {[member](RunConfig& c, const std::string& v) { (c.*member).base_lr = parse_double(v); },
                           [member](const RunConfig& c) { return format_double((c.*member).base_lr); }};
  keys[section + ".lr_schedule"] = {
      [member](RunConfig& c, const std::string& v) {
        if (v == "constant") (c.*member).schedule.kind = LrSchedule::Kind::constant;
        else if (v == "step_decay") (c.*member).schedule.kind = LrSchedule::Kind::step_decay;
        else throw InputError("lr_schedule must be constant or step_decay");
      },
      [member](const RunConfig& c) {
        return std::string((c.*member).schedule.kind == LrSchedule::Kind::constant ? "constant" : "step_decay");
      }};
  keys[section + ".lr_decay_factor"] = {
      [member](RunConfig& c, const std::string& v) { (c.*member).schedule.factor = parse_double(v); },
      [member](const RunConfig& c) { return format_double((c.*member).schedule.factor); }};
  keys[section + ".lr_decay_every"] = {
      [member](RunConfig& c, const std::string& v) { (c.*member).schedule.every_n_epochs = static_cast<int>(parse_int(v)); },
      [member](const RunConfig& c) { return std::to_string((c.*member).schedule.every_n_epochs); }};
  keys[section + ".epochs"] = {
      [member](RunConfig& c, const std::string& v) { (c.*member).epochs = static_cast<int>(parse_int(v)); },
      [member](const RunConfig& c) { return std::to_string((c.*member).epochs); }};
  keys[section + ".batch_size"] = {
      [member](RunConfig& c, const std::string& v) { (c.*member).batch_size = static_cast<int>(parse_int(v)); },
      [member](const RunConfig& c) { return std::to_string((c.*member).batch_size); }};
  keys[section + ".beta1"] = {[member](RunConfig& c, const std::string& v) { (c.*member).beta1 = parse_double(v); },
                              [member](const RunConfig& c) { return format_double((c.*member).beta1); }};
  keys[section + ".beta2"] = {[member](RunConfig& c, const std::string& v) { (c.*member).beta2 = parse_double(v); },
                              [member](const RunConfig& c) { return format_double((c.*member).beta2); }};
  keys[section + ".adam_eps"] = {[member](RunConfig& c, const std::string& v) { (c.*member).adam_eps = parse_double(v); },
                                 [member](const RunConfig& c) { return format_double((c.*member).adam_eps); }};
  keys[section + ".momentum"] = {[member](RunConfig& c, const std::string& v) { (c.*member).momentum = parse_double(v); },
                                 [member](const RunConfig& c) { return format_double((c.*member).momentum); }};
}

const std::map<std::string, Key>& registry() {
  static const std::map<std::string, Key> keys = [] {
    std::map<std::string, Key> k;
    k["seed"] = {[](RunConfig& c, const std::string& v) {
                   c.seed = parse_uint(v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    k["paths.data_dir"] = {[](RunConfig& c, const std::string& v) { c.data_dir = v; },
                           [](const RunConfig& c) { return c.data_dir.string(); }};
    k["paths.work_dir"] = {[](RunConfig& c, const std::string& v) { c.work_dir = v; },
                           [](const RunConfig& c) { return c.work_dir.string(); }};
    k["data.scheme"] = {[](RunConfig& c, const std::string& v) { c.scheme = parse_scheme(v); },
                        [](const RunConfig& c) { return to_string(c.scheme); }};
    k["data.ood_families"] = {[](RunConfig& c, const std::string& v) { c.ood_families = parse_strings(v); },
                              [](const RunConfig& c) { return join_strings(c.ood_families); }};
    k["data.proxy_families"] = {[](RunConfig& c, const std::string& v) { c.proxy_families = parse_strings(v); },
                                [](const RunConfig& c) { return join_strings(c.proxy_families); }};
    k["split.train"] = {[](RunConfig& c, const std::string& v) { c.split.train = parse_double(v); },
                        [](const RunConfig& c) { return format_double(c.split.train); }};
    k["split.val"] = {[](RunConfig& c, const std::string& v) { c.split.val = parse_double(v); },
                      [](const RunConfig& c) { return format_double(c.split.val); }};
    k["split.test"] = {[](RunConfig& c, const std::string& v) { c.split.test = parse_double(v); },
                       [](const RunConfig& c) { return format_double(c.split.test); }};

    auto synth_int = [&k](const std::string& name, int SynthSpec::*m) {
      k["synth." + name] = {[m](RunConfig& c, const std::string& v) { c.synth.*m = static_cast<int>(parse_int(v)); },
                            [m](const RunConfig& c) { return std::to_string(c.synth.*m); }};
    };
    synth_int("n_families", &SynthSpec::n_families);
    synth_int("dim", &SynthSpec::dim);
    synth_int("samples_per_family", &SynthSpec::samples_per_family);
    synth_int("n_ood_families", &SynthSpec::n_ood_families);
    synth_int("n_proxy_families", &SynthSpec::n_proxy_families);
    k["synth.centroid_separation"] = {
        [](RunConfig& c, const std::string& v) { c.synth.centroid_separation = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.synth.centroid_separation); }};
    k["synth.intra_family_sigma"] = {
        [](RunConfig& c, const std::string& v) { c.synth.intra_family_sigma = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.synth.intra_family_sigma); }};

    k["stage1.hidden"] = {[](RunConfig& c, const std::string& v) { c.stage1_hidden = parse_ints(v); },
                          [](const RunConfig& c) { return join_ints(c.stage1_hidden); }};
    k["stage1.dropout"] = {[](RunConfig& c, const std::string& v) { c.stage1_dropout = parse_double(v); },
                           [](const RunConfig& c) { return format_double(c.stage1_dropout); }};
    k["stage1.batchnorm"] = {[](RunConfig& c, const std::string& v) { c.stage1_batchnorm = parse_bool(v); },
                             [](const RunConfig& c) { return bool_str(c.stage1_batchnorm); }};
    add_train_keys(k, "stage1", &RunConfig::stage1_train);

    k["boundary.band"] = {[](RunConfig& c, const std::string& v) { c.gate.band = parse_double(v); },
                          [](const RunConfig& c) { return format_double(c.gate.band); }};
    k["boundary.one_sided"] = {[](RunConfig& c, const std::string& v) { c.gate.one_sided = parse_bool(v); },
                               [](const RunConfig& c) { return bool_str(c.gate.one_sided); }};

    k["fusion.hidden"] = {[](RunConfig& c, const std::string& v) { c.fusion_hidden = parse_ints(v); },
                          [](const RunConfig& c) { return join_ints(c.fusion_hidden); }};
    k["fusion.dropout"] = {[](RunConfig& c, const std::string& v) { c.fusion_dropout = parse_double(v); },
                           [](const RunConfig& c) { return format_double(c.fusion_dropout); }};
    k["fusion.batchnorm"] = {[](RunConfig& c, const std::string& v) { c.fusion_batchnorm = parse_bool(v); },
                             [](const RunConfig& c) { return bool_str(c.fusion_batchnorm); }};
    add_train_keys(k, "fusion", &RunConfig::fusion_train);

    k["decision.policy"] = {[](RunConfig& c, const std::string& v) { c.policy = parse_policy(v); },
                            [](const RunConfig& c) { return to_string(c.policy); }};
    k["metrics.scorer"] = {
        [](RunConfig& c, const std::string& v) {
          if (v == "fusion") c.scorer = Scorer::fusion;
          else if (v == "gate") c.scorer = Scorer::gate;
          else throw InputError("metrics.scorer must be fusion or gate");
        },
        [](const RunConfig& c) { return std::string(c.scorer == Scorer::fusion ? "fusion" : "gate"); }};
    k["metrics.tpr_target"] = {[](RunConfig& c, const std::string& v) { c.eval.tpr_target = parse_double(v); },
                               [](const RunConfig& c) { return format_double(c.eval.tpr_target); }};
    k["metrics.fpr_target"] = {[](RunConfig& c, const std::string& v) { c.eval.fpr_target = parse_double(v); },
                               [](const RunConfig& c) { return format_double(c.eval.fpr_target); }};
    k["diagnostics.k_neighbors"] = {
        [](RunConfig& c, const std::string& v) { c.diagnostics_k_neighbors = static_cast<int>(parse_int(v)); },
        [](const RunConfig& c) { return std::to_string(c.diagnostics_k_neighbors); }};
    k["diagnostics.max_points"] = {
        [](RunConfig& c, const std::string& v) { c.diagnostics_max_points = static_cast<int>(parse_int(v)); },
        [](const RunConfig& c) { return std::to_string(c.diagnostics_max_points); }};
    return k;
  }();
  return keys;
}

}  // namespace

RunConfig::RunConfig() {
  stage1_train.optimizer = Optimizer::adam;
  stage1_train.base_lr = 1e-3;
  stage1_train.schedule = {LrSchedule::Kind::step_decay, 0.5, 10};
  stage1_train.epochs = 30;
  stage1_train.batch_size = 32;

  fusion_train = stage1_train;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = registry();
  auto it = keys.find(key);
  if (it == keys.end()) throw InputError("unknown config key '" + key + "'");
  try {
    it->second.set(*this, std::string(trim(value)));
  } catch (const InputError& e) {
    throw InputError("config key '" + key + "': " + e.what());
  }
}

void RunConfig::validate() const {
  if (stage1_hidden.empty()) throw InputError("stage1.hidden needs at least one layer");
  for (int h : stage1_hidden)
    if (h < 1) throw InputError("stage1.hidden widths must be >= 1");
  for (int h : fusion_hidden)
    if (h < 1) throw InputError("fusion.hidden widths must be >= 1");
  if (!(stage1_dropout >= 0 && stage1_dropout < 1) || !(fusion_dropout >= 0 && fusion_dropout < 1))
    throw InputError("dropout must lie in [0, 1)");
  if (!(gate.band > 0)) throw InputError("boundary.band must be positive");
  stage1_train.validate();
  fusion_train.validate();
  if (!(eval.tpr_target > 0 && eval.tpr_target <= 1)) throw InputError("metrics.tpr_target must lie in (0, 1]");
  if (!(eval.fpr_target >= 0 && eval.fpr_target <= 1)) throw InputError("metrics.fpr_target must lie in [0, 1]");
  if (diagnostics_k_neighbors < 1 || diagnostics_max_points < 2)
    throw InputError("diagnostics settings out of range");
}

TrainConfig RunConfig::stage1_training() const {
  auto t = stage1_train;
  t.seed = derive_seed(seed, "stage1.train");
  return t;
}

TrainConfig RunConfig::fusion_training() const {
  auto t = fusion_train;
  t.seed = derive_seed(seed, "fusion.train");
  return t;
}

MlpConfig RunConfig::stage1_network(int input_dim, int num_classes) const {
  MlpConfig c;
  c.layer_dims.push_back(input_dim);
  c.layer_dims.insert(c.layer_dims.end(), stage1_hidden.begin(), stage1_hidden.end());
  c.layer_dims.push_back(num_classes);
  c.dropout_rate = stage1_dropout;
  c.use_batchnorm = stage1_batchnorm;
  c.validate();
  return c;
}

void apply_config_text(RunConfig& config, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw InputError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    config.set(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  RunConfig config;
  try {
    apply_config_text(config, text);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return config;
}

std::string dump_config(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& [key, k] : registry()) out << key << " = " << k.get(config) << '\n';
  return out.str();
}

}  // namespace madood

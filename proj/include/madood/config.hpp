#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "madood/boundary.hpp"
#include "madood/dataset.hpp"
#include "madood/fusion.hpp"
#include "madood/metrics.hpp"
#include "madood/nncore.hpp"

namespace madood {

enum class Scorer { fusion, gate };

/// Everything a run needs. Defaults describe the synthetic desk-scale setup;
/// `docs/config.md` lists every key.
struct RunConfig {
  std::uint64_t seed = 20240917;
  std::filesystem::path data_dir;
  std::filesystem::path work_dir = "work";

  Scheme scheme = Scheme::byte_histogram_256;
  std::vector<std::string> ood_families;
  std::vector<std::string> proxy_families;
  SplitRatios split;

  SynthSpec synth{.n_families = 9,
                  .dim = 16,
                  .samples_per_family = 200,
                  .centroid_separation = 10.0,
                  .intra_family_sigma = 1.0,
                  .n_ood_families = 2,
                  .n_proxy_families = 2};

  std::vector<int> stage1_hidden{128, 64};
  double stage1_dropout = 0.1;
  bool stage1_batchnorm = true;
  TrainConfig stage1_train;

  GateOptions gate;

  std::vector<int> fusion_hidden{64};
  double fusion_dropout = 0.0;
  bool fusion_batchnorm = true;
  TrainConfig fusion_train;

  DecisionPolicy policy = DecisionPolicy::fusion_priority;
  Scorer scorer = Scorer::fusion;
  EvalOptions eval;
  int diagnostics_k_neighbors = 10;
  int diagnostics_max_points = 400;

  RunConfig();

  /// Sets one `section.key`; throws InputError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  // Named sub-seeds derived from `seed`.
  std::uint64_t split_seed() const { return derive_seed(seed, "split"); }
  std::uint64_t synth_seed() const { return derive_seed(seed, "synth"); }
  std::uint64_t stage1_init_seed() const { return derive_seed(seed, "stage1.init"); }
  std::uint64_t fusion_init_seed() const { return derive_seed(seed, "fusion.init"); }
  /// Training settings with the batch-order/dropout seed filled in.
  TrainConfig stage1_training() const;
  TrainConfig fusion_training() const;
  MlpConfig stage1_network(int input_dim, int num_classes) const;
};

/// Applies `section.key = value` lines (`#` comments, blank lines allowed).
void apply_config_text(RunConfig& config, std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in the file format.
std::string dump_config(const RunConfig& config);

}  // namespace madood

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "madood/common.hpp"

namespace madood {

using Bytes = std::vector<std::uint8_t>;

enum class Split { train, val, test };

/// Featurization scheme. `raw` marks vectors that did not come from bytes
/// (synthetic data, externally computed tables); any length is accepted.
enum class Scheme { byte_image_32x32, byte_histogram_256, raw };

std::string to_string(Split s);
std::string to_string(Scheme s);
Split parse_split(std::string_view s);
Scheme parse_scheme(std::string_view s);

/// Expected vector length for a scheme, or 0 for `raw`.
int scheme_dim(Scheme s);

/// One specimen. A record read back from a manifest file carries no payload
/// (monostate); its bytes live at `source` and its features in a feature file.
struct SampleRecord {
  std::string id;
  std::string family;
  std::optional<Split> split;
  std::string source = "inline";
  std::variant<std::monostate, Bytes, Vector> payload;
};

struct DatasetManifest {
  std::vector<SampleRecord> samples;
  /// In-distribution families; position is the class index.
  std::vector<std::string> families;
  /// Held-out families. Never indexed, never in train/val.
  std::vector<std::string> ood_families;
  /// Held-aside outlier families used only to teach the fusion network its
  /// OOD column. Disjoint from `ood_families`; never in test.
  std::vector<std::string> proxy_families;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(families.size()); }
  /// Class index of an in-distribution family, nullopt otherwise.
  std::optional<int> class_index(const std::string& family) const;
  bool is_ood(const std::string& family) const;
  bool is_proxy(const std::string& family) const;

  /// Throws InputError on any broken invariant.
  void validate() const;
};

struct IngestResult {
  DatasetManifest manifest;
  /// Per-file failures; ingestion continues past them.
  std::vector<std::string> errors;
};

/// One record per regular file found below a first-level subdirectory of
/// `root`; the subdirectory name (mapped through `label_rule` when it has an
/// entry) is the family. Records are ordered lexicographically by path.
IngestResult ingest_directory(const std::filesystem::path& root,
                              const std::map<std::string, std::string>& label_rule = {});

/// Fixed raster width used by the byte-image scheme.
inline constexpr int kImageRasterWidth = 256;
inline constexpr int kImageSide = 32;

Vector featurize_bytes(std::span<const std::uint8_t> payload, Scheme scheme);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Stratified per family, seeded. OOD families go to test; proxy families are
/// divided between train and val only.
DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios,
                              std::uint64_t seed);

struct SynthSpec {
  int n_families = 7;
  int dim = 16;
  int samples_per_family = 200;
  double centroid_separation = 10.0;
  double intra_family_sigma = 1.0;
  int n_ood_families = 2;
  /// Taken from the families preceding the OOD ones.
  int n_proxy_families = 0;

  void validate() const;
};

struct SynthResult {
  DatasetManifest manifest;  // splits unassigned
  Matrix features;           // one row per manifest sample, values in [0,1]
  /// Family centroids and sigma after the affine rescale into [0,1].
  Matrix centroids;
  double sigma = 0.0;
};

SynthResult generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

/// Features keyed by sample id, rows aligned with `ids`.
struct FeatureTable {
  Scheme scheme = Scheme::raw;
  Matrix values;
  std::vector<std::string> ids;

  int dim() const { return static_cast<int>(values.cols()); }
  /// Row of the given id; throws InputError if absent.
  Index row_of(const std::string& id) const;

 private:
  mutable std::map<std::string, Index> index_;
};

std::string format_manifest(const DatasetManifest& manifest);
std::string format_features(const FeatureTable& table);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

void write_features(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_features(const std::filesystem::path& path);

/// Parses one `id<TAB>v1,v2,...` feature line.
std::pair<std::string, Vector> parse_feature_line(std::string_view line, int expected_dim = -1);

}  // namespace madood

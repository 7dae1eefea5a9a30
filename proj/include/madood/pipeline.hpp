#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "madood/config.hpp"

namespace madood {

/// File names inside the work directory.
namespace artifacts {
inline constexpr const char* kManifest = "manifest.tsv";
inline constexpr const char* kFeatures = "features.tsv";
inline constexpr const char* kStage1 = "stage1.ckpt";
inline constexpr const char* kStage1Log = "stage1_train.tsv";
inline constexpr const char* kBoundaries = "boundaries.tsv";
inline constexpr const char* kDiagnostics = "diagnostics.txt";
inline constexpr const char* kFusion = "fusion.ckpt";
inline constexpr const char* kFusionLog = "fusion_train.tsv";
inline constexpr const char* kMetrics = "metrics.txt";
inline constexpr const char* kConfusion = "confusion.tsv";
inline constexpr const char* kRoc = "roc.tsv";
inline constexpr const char* kPrId = "pr_id.tsv";
inline constexpr const char* kPrOod = "pr_ood.tsv";
inline constexpr const char* kPredictions = "predictions.tsv";
}  // namespace artifacts

/// Writes `bytes` to `path` via `path.partial`; the rename happens only once
/// the write succeeded, so a failure leaves the `.partial` file behind.
void write_artifact(const std::filesystem::path& path, std::string_view bytes);

// Each stage reads its inputs from and writes its outputs to config.work_dir.
// Progress lines go to `log`.
void run_synth(const RunConfig& config, std::ostream& log);
void run_featurize(const RunConfig& config, std::ostream& log);
void run_train(const RunConfig& config, std::ostream& log);
void run_fit_boundaries(const RunConfig& config, std::ostream& log);
void run_train_fusion(const RunConfig& config, std::ostream& log);
MetricsReport run_evaluate(const RunConfig& config, std::ostream& log);
/// train -> fit-boundaries -> train-fusion -> evaluate. Failures are rethrown
/// with the stage name prefixed.
MetricsReport run_pipeline(const RunConfig& config, std::ostream& log);

/// Scores feature lines (`id<TAB>v1,...`) from a feature file or a single
/// inline line, printing one record per sample to `out`.
void run_score(const RunConfig& config, const std::optional<std::filesystem::path>& input,
               const std::optional<std::string>& line, std::ostream& out);

}  // namespace madood

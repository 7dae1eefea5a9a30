#include "madood/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

namespace madood {

namespace fs = std::filesystem;

void write_artifact(const fs::path& path, std::string_view bytes) {
  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + partial.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + partial.string());
  }
  fs::rename(partial, path);
}

namespace {

void ensure_work_dir(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.work_dir, ec);
  if (ec || !fs::is_directory(config.work_dir))
    throw InputError("cannot create work dir " + config.work_dir.string());
}

fs::path in_work(const RunConfig& config, const char* name) { return config.work_dir / name; }

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw InputError("missing input file " + path.string());
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

struct LoadedData {
  DatasetManifest manifest;
  FeatureTable features;
};

LoadedData load_data(const RunConfig& config) {
  const auto manifest_path = in_work(config, artifacts::kManifest);
  const auto features_path = in_work(config, artifacts::kFeatures);
  require_file(manifest_path);
  require_file(features_path);
  LoadedData d{read_manifest(manifest_path), read_features(features_path)};
  if (d.manifest.families.size() < 2) throw InputError("need at least 2 in-distribution families");
  for (const auto& s : d.manifest.samples) {
    d.features.row_of(s.id);
    if (!s.split) throw InputError("sample '" + s.id + "' has no split; run synth/featurize first");
  }
  return d;
}

struct Subset {
  Matrix x;
  std::vector<int> y;  // class index; K for proxy and OOD rows
  std::vector<std::size_t> samples;
};

enum Include : unsigned { kId = 1, kProxy = 2, kOod = 4 };

Subset select(const LoadedData& d, Split split, unsigned include) {
  const int k = d.manifest.num_classes();
  Subset s;
  for (std::size_t i = 0; i < d.manifest.samples.size(); ++i) {
    const auto& rec = d.manifest.samples[i];
    if (rec.split != split) continue;
    auto cls = d.manifest.class_index(rec.family);
    const bool take = cls ? (include & kId) : d.manifest.is_proxy(rec.family) ? (include & kProxy) : (include & kOod);
    if (!take) continue;
    s.samples.push_back(i);
    s.y.push_back(cls ? *cls : k);
  }
  s.x.resize(static_cast<Index>(s.samples.size()), d.features.dim());
  for (std::size_t r = 0; r < s.samples.size(); ++r)
    s.x.row(static_cast<Index>(r)) = d.features.values.row(d.features.row_of(d.manifest.samples[s.samples[r]].id));
  return s;
}

std::string train_log(const TrainReport& report) {
  std::ostringstream out;
  out << "epoch\tlr\ttrain_loss\tval_loss\tval_accuracy\n";
  for (const auto& e : report.epochs)
    out << e.epoch << '\t' << format_double(e.lr) << '\t' << format_double(e.train_loss) << '\t'
        << format_double(e.val_loss) << '\t' << format_double(e.val_accuracy) << '\n';
  out << "# best_epoch=" << report.best_epoch << '\n';
  return out.str();
}

std::vector<std::string> families_of(const MlpModel& model, const char* what) {
  auto it = model.metadata.find("families");
  if (it == model.metadata.end()) throw InputError(std::string(what) + " checkpoint has no family list");
  return split(it->second, ',');
}

struct Artifacts {
  MlpModel stage1;
  BoundarySetd boundaries;
  std::optional<MlpModel> fusion;
  std::vector<std::string> families;
};

Artifacts load_artifacts(const RunConfig& config, bool need_fusion) {
  Artifacts a;
  const auto stage1_path = in_work(config, artifacts::kStage1);
  const auto bounds_path = in_work(config, artifacts::kBoundaries);
  require_file(stage1_path);
  require_file(bounds_path);
  a.stage1 = load_checkpoint(stage1_path);
  a.families = families_of(a.stage1, "stage-1");
  a.boundaries = read_boundaries(bounds_path);
  const int k = static_cast<int>(a.families.size());
  if (a.stage1.num_outputs() != k)
    throw InputError("stage-1 checkpoint: expected " + std::to_string(k) + " outputs, found " +
                     std::to_string(a.stage1.num_outputs()));
  if (a.boundaries.num_classes() != k || a.boundaries.embedding_dim != a.stage1.embedding_dim())
    throw InputError("boundaries header mismatch: expected K=" + std::to_string(k) + " dim=" +
                     std::to_string(a.stage1.embedding_dim()) + ", found K=" +
                     std::to_string(a.boundaries.num_classes()) + " dim=" +
                     std::to_string(a.boundaries.embedding_dim));
  if (need_fusion) {
    const auto fusion_path = in_work(config, artifacts::kFusion);
    require_file(fusion_path);
    a.fusion = load_checkpoint(fusion_path);
    const auto layout = read_layout(*a.fusion);
    if (layout.num_classes != k || layout.feature_dim != a.stage1.input_dim())
      throw InputError("fusion checkpoint header mismatch: expected K=" + std::to_string(k) + " d_in=" +
                       std::to_string(a.stage1.input_dim()) + ", found K=" +
                       std::to_string(layout.num_classes) + " d_in=" + std::to_string(layout.feature_dim));
    if (families_of(*a.fusion, "fusion") != a.families)
      throw InputError("fusion checkpoint family list differs from stage-1 (expected " + join(a.families) + ")");
  }
  return a;
}

GateOptions gate_options(const RunConfig& config) { return config.gate; }

}  // namespace

// ---------------------------------------------------------------------------

void run_synth(const RunConfig& config, std::ostream& log) {
  config.validate();
  ensure_work_dir(config);
  auto synth = generate_synthetic(config.synth, config.synth_seed());
  auto manifest = split_dataset(synth.manifest, config.split, config.split_seed());

  FeatureTable table;
  table.scheme = Scheme::raw;
  table.values = synth.features;
  for (const auto& s : manifest.samples) table.ids.push_back(s.id);

  write_artifact(in_work(config, artifacts::kManifest), format_manifest(manifest));
  write_artifact(in_work(config, artifacts::kFeatures), format_features(table));

  log << "synth: " << manifest.samples.size() << " samples, " << manifest.families.size()
      << " in-distribution families, " << manifest.proxy_families.size() << " proxy, "
      << manifest.ood_families.size() << " OOD; dim=" << config.synth.dim
      << " separation=" << format_double(config.synth.centroid_separation) << " sigma\n";
}

void run_featurize(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.data_dir.empty()) throw InputError("paths.data_dir is not set");
  if (config.scheme == Scheme::raw) throw InputError("featurize needs a byte scheme");
  ensure_work_dir(config);
  auto ingested = ingest_directory(config.data_dir);
  for (const auto& e : ingested.errors) log << "featurize: skipped " << e << '\n';
  auto& manifest = ingested.manifest;

  auto move_out = [&](const std::vector<std::string>& names, std::vector<std::string>& into) {
    for (const auto& name : names) {
      auto it = std::find(manifest.families.begin(), manifest.families.end(), name);
      if (it == manifest.families.end()) throw InputError("family '" + name + "' not found under data dir");
      manifest.families.erase(it);
      into.push_back(name);
    }
  };
  move_out(config.ood_families, manifest.ood_families);
  move_out(config.proxy_families, manifest.proxy_families);

  FeatureTable table;
  table.scheme = config.scheme;
  table.values.resize(static_cast<Index>(manifest.samples.size()), scheme_dim(config.scheme));
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    auto& s = manifest.samples[i];
    const auto& bytes = std::get<Bytes>(s.payload);
    if (bytes.empty()) throw InputError("empty file " + s.source);
    table.values.row(static_cast<Index>(i)) = featurize_bytes(bytes, config.scheme).transpose();
    table.ids.push_back(s.id);
    s.payload = std::monostate{};
  }
  manifest = split_dataset(manifest, config.split, config.split_seed());

  write_artifact(in_work(config, artifacts::kManifest), format_manifest(manifest));
  write_artifact(in_work(config, artifacts::kFeatures), format_features(table));
  log << "featurize: " << manifest.samples.size() << " samples, " << manifest.families.size()
      << " in-distribution families, scheme=" << to_string(config.scheme) << '\n';
}

void run_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto data = load_data(config);
  const auto train_set = select(data, Split::train, kId);
  const auto val_set = select(data, Split::val, kId);
  const int k = data.manifest.num_classes();

  auto model = init_model(config.stage1_network(data.features.dim(), k), config.stage1_init_seed());
  model.metadata["role"] = "stage1";
  model.metadata["families"] = join(data.manifest.families);
  auto result = train(std::move(model), train_set.x, train_set.y, val_set.x, val_set.y, config.stage1_training());

  write_artifact(in_work(config, artifacts::kStage1), serialize_checkpoint(result.model));
  write_artifact(in_work(config, artifacts::kStage1Log), train_log(result.report));
  log << "train: stage-1 " << train_set.x.rows() << " train / " << val_set.x.rows()
      << " val samples, best epoch " << result.report.best_epoch << ", val accuracy "
      << format_double(result.report.best_val_accuracy) << '\n';
}

void run_fit_boundaries(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto data = load_data(config);
  const auto stage1_path = in_work(config, artifacts::kStage1);
  require_file(stage1_path);
  const auto stage1 = load_checkpoint(stage1_path);
  if (families_of(stage1, "stage-1") != data.manifest.families)
    throw InputError("stage-1 checkpoint families do not match the manifest");

  const auto train_set = select(data, Split::train, kId);
  const Matrix emb = embed(stage1, train_set.x);
  auto set = fit_boundaries(emb, train_set.y, data.manifest.num_classes());
  set.band = config.gate.band;
  write_artifact(in_work(config, artifacts::kBoundaries), format_boundaries(set));

  std::ostringstream diag;
  diag << "# boundary diagnostics (advisory)\n";
  for (const auto& b : set.boundaries) {
    diag << "family." << data.manifest.families[static_cast<std::size_t>(b.class_id)]
         << " n=" << b.n_samples << " sigma_iso=" << format_double(b.sigma_iso)
         << " dist_mean=" << format_double(b.dist_mean) << " dist_std=" << format_double(b.dist_std)
         << " cv=" << format_double(coefficient_of_variation(b.dist_mean, b.dist_std)) << '\n';
  }
  // Evenly strided subsample keeps the dense eigenproblem small.
  const auto n = static_cast<std::size_t>(emb.rows());
  const auto stride = std::max<std::size_t>(1, (n + static_cast<std::size_t>(config.diagnostics_max_points) - 1) /
                                                   static_cast<std::size_t>(config.diagnostics_max_points));
  std::vector<Index> pick;
  for (std::size_t i = 0; i < n; i += stride) pick.push_back(static_cast<Index>(i));
  Matrix sub(static_cast<Index>(pick.size()), emb.cols());
  std::vector<int> sub_labels;
  for (std::size_t i = 0; i < pick.size(); ++i) {
    sub.row(static_cast<Index>(i)) = emb.row(pick[i]);
    sub_labels.push_back(train_set.y[static_cast<std::size_t>(pick[i])]);
  }
  try {
    auto report = spectral_diagnostics(sub, sub_labels, config.diagnostics_k_neighbors);
    diag << "spectral.points=" << pick.size() << " k=" << config.diagnostics_k_neighbors
         << " edges=" << report.edge_count << '\n';
    diag << "spectral.eigenvalues_below_" << format_double(report.threshold) << "=" << report.near_zero_eigenvalues << '\n';
    for (std::size_t c = 0; c < report.conductance.size(); ++c)
      diag << "spectral.conductance." << data.manifest.families[c] << "=" << format_double(report.conductance[c]) << '\n';
  } catch (const InputError& e) {
    diag << "spectral.error=" << e.what() << '\n';
  }
  write_artifact(in_work(config, artifacts::kDiagnostics), diag.str());
  log << "fit-boundaries: " << set.num_classes() << " boundaries in " << set.embedding_dim
      << "-d embedding space\n";
}

void run_train_fusion(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto data = load_data(config);
  const auto arts = load_artifacts(config, false);
  if (arts.families != data.manifest.families)
    throw InputError("stage-1 checkpoint families do not match the manifest");
  const auto gate = gate_options(config);
  const auto train_set = select(data, Split::train, kId | kProxy);
  const auto val_set = select(data, Split::val, kId | kProxy);
  const auto train_in = assemble_fusion_batch(train_set.x, arts.stage1, arts.boundaries, gate);
  const auto val_in = assemble_fusion_batch(val_set.x, arts.stage1, arts.boundaries, gate);

  const FusionLayout layout{data.manifest.num_classes(), data.features.dim()};
  auto result = train_fusion(layout, train_in.inputs, train_set.y, val_in.inputs, val_set.y,
                             fusion_config(layout, config.fusion_hidden, config.fusion_dropout, config.fusion_batchnorm),
                             config.fusion_init_seed(), config.fusion_training());
  result.model.metadata["role"] = "fusion";
  result.model.metadata["families"] = join(data.manifest.families);
  write_artifact(in_work(config, artifacts::kFusion), serialize_checkpoint(result.model));
  write_artifact(in_work(config, artifacts::kFusionLog), train_log(result.report));
  const auto proxies = std::count(train_set.y.begin(), train_set.y.end(), layout.num_classes);
  log << "train-fusion: " << train_set.x.rows() << " train rows (" << proxies << " proxy OOD), best epoch "
      << result.report.best_epoch << ", val accuracy " << format_double(result.report.best_val_accuracy) << '\n';
}

MetricsReport run_evaluate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto data = load_data(config);
  const auto arts = load_artifacts(config, true);
  if (arts.families != data.manifest.families)
    throw InputError("checkpoint families do not match the manifest");
  const int k = data.manifest.num_classes();
  const auto test_set = select(data, Split::test, kId | kOod);
  if (test_set.samples.empty()) throw InputError("test split is empty");
  const auto batch = assemble_fusion_batch(test_set.x, arts.stage1, arts.boundaries, gate_options(config));
  const auto fused = predict_final(batch.inputs, *arts.fusion);

  std::vector<ScoredSample> final_scored, gate_scored;
  std::ostringstream preds;
  preds << "id\ttrue_family\tstage1\tgate\tnearest\tmin_abs_z\tfusion\tood_score\tfinal\n";
  std::vector<std::string> names = data.manifest.families;
  names.push_back("OOD");
  Index stage1_gate_hits = 0;
  for (std::size_t i = 0; i < test_set.samples.size(); ++i) {
    const auto& rec = data.manifest.samples[test_set.samples[i]];
    const auto& verdict = batch.verdicts[i];
    const auto& f = fused[i];
    ScoredSample s;
    s.id = rec.id;
    s.is_id = test_set.y[i] < k;
    s.true_class = test_set.y[i];
    s.true_family = rec.family;
    s.predicted = final_decision(f, verdict, config.policy);
    s.flagged_ood = s.predicted == k;
    s.class_probs = f.class_probs;
    s.score = config.scorer == Scorer::fusion ? 1.0 - f.ood_score : -verdict.min_abs_z;
    final_scored.push_back(s);

    ScoredSample g = s;
    g.score = -verdict.min_abs_z;
    g.flagged_ood = !verdict.in_distribution();
    gate_scored.push_back(std::move(g));

    Index top = 0;
    batch.stage1_probs.row(static_cast<Index>(i)).maxCoeff(&top);
    const int gated = verdict.in_distribution() ? static_cast<int>(top) : k;
    stage1_gate_hits += gated == s.true_class ? 1 : 0;

    preds << rec.id << '\t' << rec.family << '\t' << names[static_cast<std::size_t>(top)] << '\t'
          << to_string(verdict.decision) << '\t' << names[static_cast<std::size_t>(verdict.nearest_class)] << '\t'
          << format_double(verdict.min_abs_z) << '\t' << names[static_cast<std::size_t>(f.predicted)] << '\t'
          << format_double(f.ood_score) << '\t' << names[static_cast<std::size_t>(s.predicted)] << '\n';
  }

  auto report = evaluate(final_scored, names, config.eval);
  report.extra["gate_auroc"] = format_double(auroc(gate_scored));
  report.extra["gate_ar_ood"] = format_double(ar_ood(gate_scored));
  report.extra["stage1_gated_acc"] =
      format_double(static_cast<double>(stage1_gate_hits) / static_cast<double>(test_set.samples.size()));
  report.extra["policy"] = to_string(config.policy);
  report.extra["scorer"] = config.scorer == Scorer::fusion ? "fusion" : "gate";
  report.extra["band"] = format_double(config.gate.band);
  report.extra["one_sided"] = config.gate.one_sided ? "true" : "false";
  report.extra["tpr_target"] = format_double(config.eval.tpr_target);
  report.extra["fpr_target"] = format_double(config.eval.fpr_target);
  report.extra["note.ar_ood"] = "macro-averaged per-family OOD recall (interpretation)";

  write_artifact(in_work(config, artifacts::kMetrics), format_report(report));
  write_artifact(in_work(config, artifacts::kConfusion), format_confusion(report.confusion, names));
  write_artifact(in_work(config, artifacts::kRoc), format_curve(roc_curve(final_scored)));
  write_artifact(in_work(config, artifacts::kPrId), format_curve(pr_curve(final_scored, Positive::id)));
  write_artifact(in_work(config, artifacts::kPrOod), format_curve(pr_curve(final_scored, Positive::ood)));
  write_artifact(in_work(config, artifacts::kPredictions), preds.str());
  log << "evaluate: " << final_scored.size() << " test samples, acc " << format_double(report.acc)
      << ", auroc " << format_double(report.auroc) << ", ar_ood " << format_double(report.ar_ood) << '\n';
  return report;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const InputError& e) {
    throw InputError(std::string("stage ") + name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(std::string("stage ") + name + ": " + e.what());
  }
}

}  // namespace

MetricsReport run_pipeline(const RunConfig& config, std::ostream& log) {
  config.validate();
  stage("train", [&] { run_train(config, log); });
  stage("fit-boundaries", [&] { run_fit_boundaries(config, log); });
  stage("train-fusion", [&] { run_train_fusion(config, log); });
  return stage("evaluate", [&] { return run_evaluate(config, log); });
}

void run_score(const RunConfig& config, const std::optional<fs::path>& input,
               const std::optional<std::string>& line, std::ostream& out) {
  config.validate();
  if (!input && !line) throw InputError("score needs --input or --line");
  const auto arts = load_artifacts(config, true);
  const int k = static_cast<int>(arts.families.size());
  const int d_in = arts.stage1.input_dim();

  std::vector<std::string> ids;
  Matrix x;
  if (input) {
    require_file(*input);
    auto table = read_features(*input);
    if (table.dim() != d_in)
      throw InputError("input features have dim " + std::to_string(table.dim()) + ", model expects " +
                       std::to_string(d_in));
    ids = table.ids;
    x = table.values;
  } else {
    auto [id, v] = parse_feature_line(*line, d_in);
    ids.push_back(id);
    x = v.transpose();
  }

  const auto batch = assemble_fusion_batch(x, arts.stage1, arts.boundaries, gate_options(config));
  const auto fused = predict_final(batch.inputs, *arts.fusion);
  auto name = [&](int c) { return c == k ? std::string("OOD") : arts.families[static_cast<std::size_t>(c)]; };
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& v = batch.verdicts[i];
    const auto& f = fused[i];
    Index top = 0;
    const double p1 = batch.stage1_probs.row(static_cast<Index>(i)).maxCoeff(&top);
    out << "id=" << ids[i] << "\tstage1=" << name(static_cast<int>(top)) << ':' << format_double(p1) << "\tz=";
    for (Index j = 0; j < v.z_scores.size(); ++j) out << (j ? "," : "") << format_double(v.z_scores[j]);
    out << "\tgate=" << to_string(v.decision) << "\tnearest=" << name(v.nearest_class)
        << "\tconfidence=" << format_double(v.confidence) << "\tsuspicion=" << to_string(v.suspicion)
        << "\tfusion=" << name(f.predicted) << ':' << format_double(f.class_probs[f.predicted])
        << "\tood_score=" << format_double(f.ood_score) << "\tfinal=" << name(final_decision(f, v, config.policy))
        << '\n';
  }
}

}  // namespace madood

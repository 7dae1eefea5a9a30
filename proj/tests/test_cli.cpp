#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "madood/dataset.hpp"
#include "test_util.hpp"

using namespace madood;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Run madood_cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(MADOOD_CLI) + " " + args + " >" + quote(out.string()) + " 2>" +
                          quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// A fully trained work dir shared by the read-only cases.
const fs::path& trained_dir() {
  static TempDir dir("cli_trained");
  static const bool ready = [] {
    const auto w = quote((dir.path / "w").string());
    REQUIRE(madood_cli("synth --work-dir " + w, dir.path).code == 0);
    REQUIRE(madood_cli("pipeline --work-dir " + w, dir.path).code == 0);
    return true;
  }();
  (void)ready;
  return dir.path;
}

std::string feature_line(const std::string& id, const Vector& v) {
  std::string s = id + "\t";
  for (Index j = 0; j < v.size(); ++j) s += (j ? "," : "") + format_double(v[j]);
  return s;
}

}  // namespace

TEST_CASE("synth: counts, determinism, invalid spec") {
  TempDir dir("cli_synth");
  write_text(dir.path / "five.cfg", "synth.n_families = 5\nsynth.n_proxy_families = 0\n");
  const auto cfg = quote((dir.path / "five.cfg").string());
  auto a = madood_cli("--config " + cfg + " synth --work-dir " + quote((dir.path / "a").string()), dir.path);
  REQUIRE(a.code == 0);
  CHECK(a.err.find("1000 samples") != std::string::npos);
  CHECK(a.err.find("separation=10") != std::string::npos);
  auto features = slurp(dir.path / "a" / "features.tsv");
  CHECK(std::count(features.begin(), features.end(), '\n') == 1000 + 1);

  REQUIRE(madood_cli("--config " + cfg + " synth --work-dir " + quote((dir.path / "b").string()), dir.path).code == 0);
  CHECK(slurp(dir.path / "b" / "features.tsv") == features);
  CHECK(slurp(dir.path / "b" / "manifest.tsv") == slurp(dir.path / "a" / "manifest.tsv"));

  REQUIRE(madood_cli("--config " + cfg + " --seed 9 synth --work-dir " + quote((dir.path / "c").string()), dir.path).code == 0);
  CHECK(slurp(dir.path / "c" / "features.tsv") != features);

  write_text(dir.path / "bad.cfg", "synth.intra_family_sigma = -1\n");
  auto bad = madood_cli("--config " + quote((dir.path / "bad.cfg").string()) + " synth --work-dir " +
                            quote((dir.path / "d").string()),
                        dir.path);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("sigma") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  TempDir dir("cli_usage");
  CHECK(madood_cli("", dir.path).code == 2);
  CHECK(madood_cli("frobnicate", dir.path).code == 2);
  CHECK(madood_cli("--seed abc synth", dir.path).code == 2);
  CHECK(madood_cli("--policy sometimes synth", dir.path).code == 2);
  CHECK(madood_cli("--band -1 synth", dir.path).code == 2);
  CHECK(madood_cli("--config /nonexistent/x.cfg synth", dir.path).code == 2);
  write_text(dir.path / "typo.cfg", "stage1.hiden = 3\n");
  CHECK(madood_cli("--config " + quote((dir.path / "typo.cfg").string()) + " synth", dir.path).code == 2);
}

TEST_CASE("missing feature file names the path") {
  TempDir dir("cli_missing");
  const auto w = dir.path / "w";
  REQUIRE(madood_cli("synth --work-dir " + quote(w.string()), dir.path).code == 0);
  fs::remove(w / "features.tsv");
  auto r = madood_cli("pipeline --work-dir " + quote(w.string()), dir.path);
  CHECK(r.code == 2);
  CHECK(r.err.find("features.tsv") != std::string::npos);
  CHECK(r.err.find("train") != std::string::npos);
}

TEST_CASE("internal failure exits with 1") {
  TempDir dir("cli_internal");
  const auto w = quote((dir.path / "w").string());
  REQUIRE(madood_cli("synth --work-dir " + w, dir.path).code == 0);
  // a step size this large drives the loss to infinity
  write_text(dir.path / "diverge.cfg", "stage1.lr = 1e300\nstage1.lr_schedule = constant\n");
  auto r = madood_cli("--config " + quote((dir.path / "diverge.cfg").string()) + " train --work-dir " + w, dir.path);
  CHECK(r.code == 1);
  CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("pipeline: report schema, byte-identical rerun, artifact round trip") {
  TempDir dir("cli_pipeline");
  const auto w = dir.path / "w";
  REQUIRE(madood_cli("synth --work-dir " + quote(w.string()), dir.path).code == 0);
  auto first = madood_cli("pipeline --work-dir " + quote(w.string()), dir.path);
  REQUIRE(first.code == 0);
  const auto metrics = slurp(w / "metrics.txt");
  for (const char* key : {"auroc", "ap_id", "ap_ood", "fpr_at_tpr95", "tpr_at_fpr05", "ar_ood", "acc"})
    CHECK(metrics.find(std::string("\n") + key + " = ") != std::string::npos);
  const auto confusion = slurp(w / "confusion.tsv");
  CHECK(confusion.rfind("true\\pred\t", 0) == 0);
  const auto stage1 = slurp(w / "stage1.ckpt"), fusion = slurp(w / "fusion.ckpt");
  const auto boundaries = slurp(w / "boundaries.tsv");
  for (const auto& e : fs::directory_iterator(w)) CHECK(e.path().extension() != ".partial");

  REQUIRE(madood_cli("pipeline --work-dir " + quote(w.string()), dir.path).code == 0);
  CHECK(slurp(w / "metrics.txt") == metrics);
  CHECK(slurp(w / "stage1.ckpt") == stage1);
  CHECK(slurp(w / "fusion.ckpt") == fusion);
  CHECK(slurp(w / "boundaries.tsv") == boundaries);

  // reload persisted artifacts and evaluate again
  fs::remove(w / "metrics.txt");
  REQUIRE(madood_cli("evaluate --work-dir " + quote(w.string()), dir.path).code == 0);
  CHECK(slurp(w / "metrics.txt") == metrics);

  // policy and band flags reach the report
  REQUIRE(madood_cli("--policy gate_priority --band 1.5 --one-sided evaluate --work-dir " + quote(w.string()),
                     dir.path).code == 0);
  const auto gated = slurp(w / "metrics.txt");
  CHECK(gated.find("policy = gate_priority") != std::string::npos);
  CHECK(gated.find("band = 1.5") != std::string::npos);
  CHECK(gated.find("one_sided = true") != std::string::npos);
}

TEST_CASE("score: typical family sample, far outlier, malformed input") {
  const auto& root = trained_dir();
  const auto w = root / "w";
  auto manifest = read_manifest(w / "manifest.tsv");
  auto features = read_features(w / "features.tsv");

  std::vector<Index> rows;
  for (const auto& s : manifest.samples)
    if (s.family == "family00" && s.split == Split::train) rows.push_back(features.row_of(s.id));
  Vector mean = Vector::Zero(features.dim());
  for (Index r : rows) mean += features.values.row(r).transpose();
  mean /= static_cast<double>(rows.size());
  std::vector<std::pair<double, Index>> by_dist;
  double sq = 0;
  for (Index r : rows) {
    const double d = (features.values.row(r).transpose() - mean).norm();
    by_dist.emplace_back(d, r);
    sq += d * d;
  }
  std::sort(by_dist.begin(), by_dist.end());
  const double sigma = std::sqrt(sq / static_cast<double>(rows.size() * static_cast<std::size_t>(features.dim())));
  const Index typical = by_dist[by_dist.size() / 2].second;

  auto in = madood_cli("score --work-dir " + quote(w.string()) + " --line " +
                           quote(feature_line("typical", features.values.row(typical).transpose())),
                       root);
  REQUIRE(in.code == 0);
  CHECK(in.out.find("id=typical\t") == 0);
  CHECK(in.out.find("\tgate=in_distribution\t") != std::string::npos);
  CHECK(in.out.find("\tfinal=family00\n") != std::string::npos);
  CHECK(in.out.find("\tz=") != std::string::npos);
  CHECK(in.out.find("\tstage1=family00:") != std::string::npos);

  Vector far = mean;
  far[features.dim() - 1] += 20 * sigma;
  auto out = madood_cli("score --work-dir " + quote(w.string()) + " --line " + quote(feature_line("far", far)), root);
  REQUIRE(out.code == 0);
  CHECK(out.out.find("\tgate=out_of_distribution\t") != std::string::npos);
  CHECK(out.out.find("\tsuspicion=highly_suspicious\t") != std::string::npos);

  CHECK(madood_cli("score --work-dir " + quote(w.string()) + " --line " + quote("no tabs here"), root).code == 2);
  CHECK(madood_cli("score --work-dir " + quote(w.string()) + " --line " + quote("x\t0.1,0.2"), root).code == 2);
  CHECK(madood_cli("score --work-dir " + quote(w.string()), root).code == 2);

  auto file = madood_cli("score --work-dir " + quote(w.string()) + " --input " + quote((w / "features.tsv").string()), root);
  CHECK(file.code == 0);
  CHECK(std::count(file.out.begin(), file.out.end(), '\n') == features.values.rows());
}

TEST_CASE("score: artifact header mismatch names expected and found") {
  const auto& root = trained_dir();
  TempDir dir("cli_mismatch");
  const auto w = dir.path / "w";
  fs::copy(root / "w", w);
  std::istringstream lines(slurp(w / "boundaries.tsv"));
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  // a two-family boundary file against five-family checkpoints
  const std::string text = "K=2 dim=64 band=1\n" + first + "\n" + second + "\n";
  write_text(w / "boundaries.tsv", text);
  auto r = madood_cli("score --work-dir " + quote(w.string()) + " --input " + quote((w / "features.tsv").string()), dir.path);
  CHECK(r.code == 2);
  CHECK(r.err.find("expected") != std::string::npos);
  CHECK(r.err.find("found") != std::string::npos);

  fs::copy_file(root / "w" / "boundaries.tsv", w / "boundaries.tsv", fs::copy_options::overwrite_existing);
  auto ck = slurp(w / "fusion.ckpt");
  ck[8] = 9;
  write_text(w / "fusion.ckpt", ck);
  auto v = madood_cli("score --work-dir " + quote(w.string()) + " --input " + quote((w / "features.tsv").string()), dir.path);
  CHECK(v.code == 2);
  CHECK(v.err.find("version") != std::string::npos);
}

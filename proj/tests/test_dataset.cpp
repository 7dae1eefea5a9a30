#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "madood/dataset.hpp"
#include "test_util.hpp"

using namespace madood;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << bytes;
}

DatasetManifest make_manifest(const std::map<std::string, int>& id_counts,
                              const std::map<std::string, int>& ood_counts = {}) {
  DatasetManifest m;
  int next = 0;
  auto add = [&](const std::string& fam, int n) {
    for (int i = 0; i < n; ++i) {
      SampleRecord r;
      r.id = "s" + std::to_string(next++);
      r.family = fam;
      m.samples.push_back(r);
    }
  };
  for (const auto& [f, n] : id_counts) {
    m.families.push_back(f);
    add(f, n);
  }
  for (const auto& [f, n] : ood_counts) {
    m.ood_families.push_back(f);
    add(f, n);
  }
  return m;
}

FeatureTable table_of(const SynthResult& r) {
  FeatureTable t;
  t.values = r.features;
  for (const auto& s : r.manifest.samples) t.ids.push_back(s.id);
  return t;
}

}  // namespace

TEST_CASE("ingest: one family of three files") {
  TempDir dir("ingest1");
  for (int i = 0; i < 3; ++i) write_file(dir.path / "Adposhel" / ("f" + std::to_string(i)), "abc");
  auto res = ingest_directory(dir.path);
  CHECK(res.errors.empty());
  REQUIRE(res.manifest.samples.size() == 3);
  for (const auto& s : res.manifest.samples) CHECK(s.family == "Adposhel");
  CHECK(res.manifest.families == std::vector<std::string>{"Adposhel"});
}

TEST_CASE("ingest: two families, lexicographic order, label rule") {
  TempDir dir("ingest2");
  write_file(dir.path / "b" / "2", "x");
  write_file(dir.path / "b" / "1", "y");
  write_file(dir.path / "a" / "9", "z");
  write_file(dir.path / "a" / "0", "w");
  auto res = ingest_directory(dir.path);
  REQUIRE(res.manifest.samples.size() == 4);
  CHECK(res.manifest.families.size() == 2);
  CHECK(res.manifest.samples[0].id == "a/0");
  CHECK(res.manifest.samples[3].id == "b/2");

  auto renamed = ingest_directory(dir.path, {{"a", "Allaple"}});
  CHECK(renamed.manifest.samples[0].family == "Allaple");
}

TEST_CASE("ingest: empty directory is an error") {
  TempDir dir("ingest3");
  CHECK_THROWS_WITH_AS(ingest_directory(dir.path), doctest::Contains("no samples"), InputError);
}

TEST_CASE("featurize: histogram of 0..255 is uniform") {
  Bytes b(256);
  for (int i = 0; i < 256; ++i) b[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
  Vector v = featurize_bytes(b, Scheme::byte_histogram_256);
  REQUIRE(v.size() == 256);
  for (Index i = 0; i < v.size(); ++i) CHECK(v[i] == 1.0 / 256);
}

TEST_CASE("featurize: zero payload gives zero image") {
  Bytes b(5000, 0);
  Vector v = featurize_bytes(b, Scheme::byte_image_32x32);
  CHECK(v.size() == 1024);
  CHECK(v.isZero(0));
}

TEST_CASE("featurize: histogram sums to one on random payloads") {
  std::mt19937_64 rng(11);
  for (std::size_t n : {1u, 7u, 4096u, 10000u}) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    Vector v = featurize_bytes(b, Scheme::byte_histogram_256);
    double sum = 0;
    for (Index i = 0; i < v.size(); ++i) sum += v[i];
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    CHECK(v.minCoeff() >= 0);
  }
}

TEST_CASE("featurize: image is pure, in [0,1], and matches a direct area average") {
  std::mt19937_64 rng(3);
  Bytes b(256 * 64);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  Vector v1 = featurize_bytes(b, Scheme::byte_image_32x32);
  Vector v2 = featurize_bytes(b, Scheme::byte_image_32x32);
  CHECK(v1 == v2);
  CHECK(v1.minCoeff() >= 0);
  CHECK(v1.maxCoeff() <= 1);
  // 64 rows -> 32: each output pixel averages a 2x8 block
  for (int r : {0, 17, 31})
    for (int c : {0, 5, 31}) {
      double s = 0;
      for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 8; ++dc) s += b[static_cast<std::size_t>((2 * r + dr) * 256 + 8 * c + dc)];
      CHECK(v1[r * 32 + c] == doctest::Approx(s / 16 / 255).epsilon(1e-12));
    }
}

TEST_CASE("featurize: empty payload and raw scheme are errors") {
  CHECK_THROWS_AS(featurize_bytes(Bytes{}, Scheme::byte_histogram_256), InputError);
  CHECK_THROWS_AS(featurize_bytes(Bytes{1, 2}, Scheme::raw), InputError);
}

TEST_CASE("split: 70/10/20 per family, OOD all in test") {
  auto m = make_manifest({{"A", 100}, {"B", 100}}, {{"X", 50}});
  auto s = split_dataset(m, {0.7, 0.1, 0.2}, 42);
  std::map<std::string, std::map<Split, int>> counts;
  for (const auto& r : s.samples) {
    REQUIRE(r.split.has_value());
    counts[r.family][*r.split]++;
  }
  for (const char* f : {"A", "B"}) {
    CHECK(counts[f][Split::train] == 70);
    CHECK(counts[f][Split::val] == 10);
    CHECK(counts[f][Split::test] == 20);
  }
  CHECK(counts["X"][Split::test] == 50);
  CHECK(counts["X"].size() == 1);
  CHECK(s.samples.size() == m.samples.size());
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("split: deterministic for a fixed seed, varies with the seed") {
  auto m = make_manifest({{"A", 40}, {"B", 33}}, {{"X", 9}});
  auto a = split_dataset(m, {0.6, 0.2, 0.2}, 5);
  auto b = split_dataset(m, {0.6, 0.2, 0.2}, 5);
  auto c = split_dataset(m, {0.6, 0.2, 0.2}, 6);
  CHECK(format_manifest(a) == format_manifest(b));
  CHECK(format_manifest(a) != format_manifest(c));
}

TEST_CASE("split: partition property over random sizes") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> size(3, 60);
    auto m = make_manifest({{"A", size(rng)}, {"B", size(rng)}, {"C", size(rng)}}, {{"X", size(rng)}});
    auto s = split_dataset(m, {0.5, 0.25, 0.25}, rng());
    std::map<std::string, int> seen;
    for (const auto& r : s.samples) {
      REQUIRE(r.split.has_value());
      seen[r.id]++;
      if (r.family == "X") CHECK(*r.split == Split::test);
    }
    CHECK(seen.size() == m.samples.size());
    for (const auto& [id, n] : seen) CHECK(n == 1);
  }
}

TEST_CASE("split: bad ratios and tiny families are errors") {
  auto m = make_manifest({{"A", 10}, {"B", 2}});
  CHECK_THROWS_AS(split_dataset(m, {0.7, 0.1, 0.2}, 1), InputError);
  auto ok = make_manifest({{"A", 10}});
  CHECK_THROWS_AS(split_dataset(ok, {0.7, 0.2, 0.2}, 1), InputError);
  CHECK_THROWS_AS(split_dataset(ok, {1.0, 0.0, 0.0}, 1), InputError);
}

TEST_CASE("synth: one family, empirical mean near centroid") {
  SynthSpec spec;
  spec.samples_per_family = 10;
  // one ID family plus the one OOD family
  spec.n_families = 2;
  spec.n_ood_families = 1;
  auto r = generate_synthetic(spec, 17);
  Matrix fam0 = r.features.topRows(10);
  Vector mean = fam0.colwise().mean().transpose();
  const double tol = 3 * r.sigma / std::sqrt(10.0);
  for (Index j = 0; j < mean.size(); ++j) CHECK(std::abs(mean[j] - r.centroids(0, j)) <= tol);
}

TEST_CASE("synth: family bookkeeping, range, determinism") {
  SynthSpec spec;
  spec.n_families = 5;
  spec.n_ood_families = 2;
  auto a = generate_synthetic(spec, 1);
  CHECK(a.manifest.families.size() == 3);
  CHECK(a.manifest.ood_families.size() == 2);
  CHECK(a.features.rows() == 1000);
  CHECK(a.features.minCoeff() >= 0);
  CHECK(a.features.maxCoeff() <= 1);
  auto b = generate_synthetic(spec, 1);
  CHECK(format_features(table_of(a)) == format_features(table_of(b)));
}

TEST_CASE("synth: centroids respect the separation and dim limit") {
  SynthSpec spec;
  spec.n_families = 9;
  spec.dim = 5;
  spec.centroid_separation = 7;
  spec.intra_family_sigma = 0.5;
  auto r = generate_synthetic(spec, 3);
  for (Index i = 0; i < r.centroids.rows(); ++i)
    for (Index j = i + 1; j < r.centroids.rows(); ++j)
      CHECK((r.centroids.row(i) - r.centroids.row(j)).norm() >= 7 * r.sigma * (1 - 1e-12));
  spec.n_families = 11;
  CHECK_THROWS_AS(generate_synthetic(spec, 3), InputError);
}

TEST_CASE("synth: separation 10 puts >= 99% of samples nearest their own centroid") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    SynthSpec spec;
    spec.n_families = 7;
    spec.centroid_separation = 10;
    auto r = generate_synthetic(spec, seed);
    int good = 0;
    for (Index i = 0; i < r.features.rows(); ++i) {
      Index best = 0;
      double best_d = INFINITY;
      for (Index k = 0; k < r.centroids.rows(); ++k) {
        const double d = (r.features.row(i) - r.centroids.row(k)).squaredNorm();
        if (d < best_d) best_d = d, best = k;
      }
      good += best == i / spec.samples_per_family;
    }
    CHECK(good >= 0.99 * static_cast<double>(r.features.rows()));
  }
}

TEST_CASE("synth: invalid spec") {
  SynthSpec spec;
  spec.centroid_separation = 0;
  CHECK_THROWS_AS(generate_synthetic(spec, 1), InputError);
  spec = {};
  spec.samples_per_family = 0;
  CHECK_THROWS_AS(generate_synthetic(spec, 1), InputError);
}

TEST_CASE("manifest and feature files round trip") {
  TempDir dir("files");
  SynthSpec spec;
  spec.n_families = 4;
  spec.n_ood_families = 1;
  spec.n_proxy_families = 1;
  spec.samples_per_family = 20;
  auto r = generate_synthetic(spec, 8);
  auto m = split_dataset(r.manifest, {}, derive_seed(8, "split"));
  write_manifest(dir.path / "m.tsv", m);
  auto back = read_manifest(dir.path / "m.tsv");
  CHECK(format_manifest(back) == format_manifest(m));
  CHECK(back.seed == m.seed);
  CHECK(back.proxy_families == m.proxy_families);

  auto t = table_of(r);
  write_features(dir.path / "f.tsv", t);
  auto tb = read_features(dir.path / "f.tsv");
  CHECK(tb.values == t.values);
  CHECK(tb.ids == t.ids);
  CHECK(tb.row_of("syn000005") == 5);
  CHECK_THROWS_AS(tb.row_of("nope"), InputError);
}

TEST_CASE("feature line parsing rejects junk") {
  CHECK_THROWS_AS(parse_feature_line("no tab here"), InputError);
  CHECK_THROWS_AS(parse_feature_line("id\t1,2,x"), InputError);
  CHECK_THROWS_AS(parse_feature_line("id\t1,2", 3), InputError);
  auto [id, v] = parse_feature_line("abc\t0.5,0.25");
  CHECK(id == "abc");
  CHECK(v.size() == 2);
}

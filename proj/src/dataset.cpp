#include "madood/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace madood {

namespace fs = std::filesystem;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::byte_image_32x32: return "byte_image_32x32";
    case Scheme::byte_histogram_256: return "byte_histogram_256";
    case Scheme::raw: return "raw";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + std::string(s) + "'");
}

Scheme parse_scheme(std::string_view s) {
  if (s == "byte_image_32x32") return Scheme::byte_image_32x32;
  if (s == "byte_histogram_256") return Scheme::byte_histogram_256;
  if (s == "raw") return Scheme::raw;
  throw InputError("unknown featurization scheme '" + std::string(s) + "'");
}

int scheme_dim(Scheme s) {
  switch (s) {
    case Scheme::byte_image_32x32: return kImageSide * kImageSide;
    case Scheme::byte_histogram_256: return 256;
    case Scheme::raw: return 0;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// manifest

std::optional<int> DatasetManifest::class_index(const std::string& family) const {
  auto it = std::find(families.begin(), families.end(), family);
  if (it == families.end()) return std::nullopt;
  return static_cast<int>(it - families.begin());
}

bool DatasetManifest::is_ood(const std::string& family) const {
  return std::find(ood_families.begin(), ood_families.end(), family) != ood_families.end();
}

bool DatasetManifest::is_proxy(const std::string& family) const {
  return std::find(proxy_families.begin(), proxy_families.end(), family) !=
         proxy_families.end();
}

namespace {

void check_name(const std::string& name, const char* what) {
  if (name.empty()) throw InputError(std::string("empty ") + what);
  if (name.find_first_of("\t\n\r,") != std::string::npos || name.front() == '#')
    throw InputError(std::string(what) + " '" + name + "' contains a reserved character");
}

}  // namespace

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto* list : {&families, &ood_families, &proxy_families}) {
    for (const auto& f : *list) {
      check_name(f, "family name");
      if (!seen.insert(f).second) throw InputError("family '" + f + "' listed twice");
    }
  }
  std::set<std::string> ids;
  for (const auto& s : samples) {
    check_name(s.id, "sample id");
    if (!ids.insert(s.id).second) throw InputError("duplicate sample id '" + s.id + "'");
    if (s.family.empty()) throw InputError("sample '" + s.id + "' has no family");
    if (!seen.count(s.family))
      throw InputError("sample '" + s.id + "' has unlisted family '" + s.family + "'");
    if (s.split && *s.split != Split::test && is_ood(s.family))
      throw InputError("OOD sample '" + s.id + "' assigned to " + to_string(*s.split));
    if (s.split && *s.split == Split::test && is_proxy(s.family))
      throw InputError("proxy sample '" + s.id + "' assigned to test");
  }
}

// ---------------------------------------------------------------------------
// ingestion

IngestResult ingest_directory(const fs::path& root,
                              const std::map<std::string, std::string>& label_rule) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw InputError("not a directory: " + root.string());

  std::vector<fs::path> files;
  for (auto it = fs::recursive_directory_iterator(root, ec);
       !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (it->is_regular_file(ec) && it.depth() >= 1) files.push_back(it->path());
  }
  std::sort(files.begin(), files.end());

  IngestResult result;
  std::set<std::string> families;
  for (const auto& file : files) {
    const auto rel = fs::relative(file, root);
    std::string family = rel.begin()->string();
    if (auto it = label_rule.find(family); it != label_rule.end()) family = it->second;

    std::ifstream in(file, std::ios::binary);
    if (!in) {
      result.errors.push_back(file.string() + ": cannot open");
      continue;
    }
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
      result.errors.push_back(file.string() + ": read error");
      continue;
    }

    SampleRecord rec;
    rec.id = rel.generic_string();
    std::replace(rec.id.begin(), rec.id.end(), ',', '_');
    rec.family = family;
    rec.source = file.string();
    rec.payload = std::move(bytes);
    families.insert(family);
    result.manifest.samples.push_back(std::move(rec));
  }
  if (result.manifest.samples.empty())
    throw InputError("no samples under " + root.string());
  result.manifest.families.assign(families.begin(), families.end());
  return result;
}

// ---------------------------------------------------------------------------
// featurization

namespace {

Vector byte_histogram(std::span<const std::uint8_t> payload) {
  Vector counts = Vector::Zero(256);
  for (auto b : payload) counts[b] += 1.0;
  return counts / static_cast<double>(payload.size());
}

// Rows of 256 bytes (last row zero-padded), area-averaged to 32x32.
Vector byte_image(std::span<const std::uint8_t> payload) {
  constexpr int W = kImageRasterWidth;
  constexpr int S = kImageSide;
  constexpr int block = W / S;
  const Index height = (static_cast<Index>(payload.size()) + W - 1) / W;

  // Column pass is exact: every output column covers 8 whole bytes.
  Matrix cols = Matrix::Zero(height, S);
  for (std::size_t i = 0; i < payload.size(); ++i)
    cols(static_cast<Index>(i / W), static_cast<Index>((i % W) / block)) += payload[i];
  cols /= block;

  // Row pass: output row i covers [i*h/32, (i+1)*h/32) with fractional overlap.
  Matrix img = Matrix::Zero(S, S);
  const double scale = static_cast<double>(height) / S;
  for (int i = 0; i < S; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    for (auto r = static_cast<Index>(std::floor(lo)); r < height && r < hi; ++r) {
      const double w = std::min(hi, static_cast<double>(r + 1)) - std::max(lo, static_cast<double>(r));
      if (w > 0) img.row(i) += w * cols.row(r);
    }
    img.row(i) /= scale;
  }
  img /= 255.0;

  Vector out(S * S);
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) out[r * S + c] = img(r, c);
  return out;
}

}  // namespace

Vector featurize_bytes(std::span<const std::uint8_t> payload, Scheme scheme) {
  if (payload.empty()) throw InputError("cannot featurize an empty payload");
  switch (scheme) {
    case Scheme::byte_histogram_256: return byte_histogram(payload);
    case Scheme::byte_image_32x32: return byte_image(payload);
    case Scheme::raw: break;
  }
  throw InputError("scheme 'raw' cannot featurize bytes");
}

// ---------------------------------------------------------------------------
// splitting

namespace {

template <typename Rng>
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
}

}  // namespace

DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios,
                              std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0))
    throw InputError("split ratios must all be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw InputError("split ratios must sum to 1");

  DatasetManifest out = manifest;
  out.seed = seed;

  std::map<std::string, std::vector<std::size_t>> by_family;
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    by_family[out.samples[i].family].push_back(i);

  auto split_family = [&](const std::string& family, bool proxy) {
    auto it = by_family.find(family);
    if (it == by_family.end()) return;
    auto idx = it->second;
    const auto n = idx.size();
    if (n < (proxy ? 2u : 3u))
      throw InputError("family '" + family + "' has " + std::to_string(n) +
                       " samples; too few to stratify");
    std::mt19937_64 rng(derive_seed(seed, family));
    shuffle_indices(idx, rng);

    std::size_t n_train, n_val;
    if (proxy) {
      const double frac = ratios.train / (ratios.train + ratios.val);
      n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(n * frac)), 1, n - 1);
      n_val = n - n_train;
    } else {
      n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.val)));
      auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.test)));
      if (n_val + n_test >= n) n_test = n - n_val - 1;
      n_train = n - n_val - n_test;
    }
    for (std::size_t j = 0; j < n; ++j) {
      auto& s = out.samples[idx[j]];
      s.split = j < n_train ? Split::train : (j < n_train + n_val ? Split::val : Split::test);
    }
  };

  for (const auto& f : out.families) split_family(f, false);
  for (const auto& f : out.proxy_families) split_family(f, true);
  for (auto& s : out.samples)
    if (out.is_ood(s.family)) s.split = Split::test;

  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// synthetic data

void SynthSpec::validate() const {
  if (n_families < 1 || dim < 1 || samples_per_family < 1)
    throw InputError("synthetic spec counts must be >= 1");
  if (n_ood_families < 0 || n_proxy_families < 0 ||
      n_ood_families + n_proxy_families >= n_families)
    throw InputError("synthetic spec needs at least one in-distribution family");
  if (!(centroid_separation > 0)) throw InputError("centroid_separation must be > 0");
  if (!(intra_family_sigma > 0)) throw InputError("intra_family_sigma must be > 0");
}

SynthResult generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  // Centroids sit on the signed coordinate axes at radius a; any two are at
  // least a*sqrt(2) = separation*sigma apart. That gives room for 2*dim families.
  if (spec.n_families > 2 * spec.dim)
    throw InputError("dim " + std::to_string(spec.dim) + " cannot hold " +
                     std::to_string(spec.n_families) + " centroids at the requested separation");

  const double sigma = spec.intra_family_sigma;
  const double radius = spec.centroid_separation * sigma / std::sqrt(2.0);
  Matrix centroids = Matrix::Zero(spec.n_families, spec.dim);
  for (int k = 0; k < spec.n_families; ++k)
    centroids(k, k % spec.dim) = k < spec.dim ? radius : -radius;

  const Index n = static_cast<Index>(spec.n_families) * spec.samples_per_family;
  Matrix x(n, spec.dim);
  std::mt19937_64 rng(derive_seed(seed, "synth"));
  std::normal_distribution<double> normal(0.0, sigma);
  for (Index i = 0; i < n; ++i) {
    const Index k = i / spec.samples_per_family;
    for (int j = 0; j < spec.dim; ++j) x(i, j) = centroids(k, j) + normal(rng);
  }

  // One global affine map into [0,1] keeps every family isotropic.
  const double lo = x.minCoeff();
  const double hi = x.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  x = (x.array() - lo) / span;
  centroids = (centroids.array() - lo) / span;

  SynthResult out;
  out.features = std::move(x);
  out.centroids = std::move(centroids);
  out.sigma = sigma / span;

  auto& m = out.manifest;
  m.seed = seed;
  const int first_ood = spec.n_families - spec.n_ood_families;
  const int first_proxy = first_ood - spec.n_proxy_families;
  std::vector<std::string> names;
  for (int k = 0; k < spec.n_families; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "family%02d", k);
    names.emplace_back(buf);
    if (k >= first_ood)
      m.ood_families.push_back(names.back());
    else if (k >= first_proxy)
      m.proxy_families.push_back(names.back());
    else
      m.families.push_back(names.back());
  }
  for (Index i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "syn%06ld", static_cast<long>(i));
    SampleRecord rec;
    rec.id = buf;
    rec.family = names[static_cast<std::size_t>(i / spec.samples_per_family)];
    rec.payload = Vector(out.features.row(i).transpose());
    m.samples.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// files

Index FeatureTable::row_of(const std::string& id) const {
  if (index_.size() != ids.size()) {
    index_.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) index_[ids[i]] = static_cast<Index>(i);
  }
  auto it = index_.find(id);
  if (it == index_.end()) throw InputError("no features for sample '" + id + "'");
  return it->second;
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += v[i];
  }
  return out;
}

std::vector<std::string> split_list(std::string_view s) {
  if (trim(s).empty()) return {};
  auto parts = split(s, ',');
  for (auto& p : parts) p = std::string(trim(p));
  return parts;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  return in;
}

}  // namespace

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  auto out = open_out(path);
  out << format_manifest(manifest);
  if (!out) throw Error("write failed: " + path.string());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "# madood-manifest v1\n";
  out << "# seed=" << manifest.seed << '\n';
  out << "# families=" << join(manifest.families) << '\n';
  out << "# ood_families=" << join(manifest.ood_families) << '\n';
  out << "# proxy_families=" << join(manifest.proxy_families) << '\n';
  for (const auto& s : manifest.samples) {
    out << s.id << '\t' << s.family << '\t' << (s.split ? to_string(*s.split) : "-") << '\t'
        << s.source << '\n';
  }
  return out.str();
}

DatasetManifest read_manifest(const fs::path& path) {
  auto in = open_in(path);
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto body = trim(std::string_view(line).substr(1));
      auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      auto key = body.substr(0, eq);
      auto value = body.substr(eq + 1);
      if (key == "seed") m.seed = parse_uint(value);
      else if (key == "families") m.families = split_list(value);
      else if (key == "ood_families") m.ood_families = split_list(value);
      else if (key == "proxy_families") m.proxy_families = split_list(value);
      continue;
    }
    auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    SampleRecord rec;
    rec.id = fields[0];
    rec.family = fields[1];
    if (fields[2] != "-") rec.split = parse_split(fields[2]);
    rec.source = fields[3];
    m.samples.push_back(std::move(rec));
  }
  m.validate();
  return m;
}

void write_features(const fs::path& path, const FeatureTable& table) {
  auto out = open_out(path);
  out << format_features(table);
  if (!out) throw Error("write failed: " + path.string());
}

std::string format_features(const FeatureTable& table) {
  std::ostringstream out;
  out << "dim=" << table.dim() << " scheme=" << to_string(table.scheme) << '\n';
  for (Index i = 0; i < table.values.rows(); ++i) {
    out << table.ids[static_cast<std::size_t>(i)] << '\t';
    for (Index j = 0; j < table.values.cols(); ++j) {
      if (j) out << ',';
      out << format_double(table.values(i, j));
    }
    out << '\n';
  }
  return out.str();
}

std::pair<std::string, Vector> parse_feature_line(std::string_view line, int expected_dim) {
  auto tab = line.find('\t');
  if (tab == std::string_view::npos || tab == 0)
    throw InputError("malformed feature line (expected id<TAB>values)");
  std::string id(line.substr(0, tab));
  auto parts = split(line.substr(tab + 1), ',');
  if (expected_dim >= 0 && static_cast<int>(parts.size()) != expected_dim)
    throw InputError("feature line for '" + id + "' has " + std::to_string(parts.size()) +
                     " values, expected " + std::to_string(expected_dim));
  Vector v(static_cast<Index>(parts.size()));
  for (std::size_t j = 0; j < parts.size(); ++j) {
    v[static_cast<Index>(j)] = parse_double(parts[j]);
    if (!std::isfinite(v[static_cast<Index>(j)]))
      throw InputError("non-finite feature value for '" + id + "'");
  }
  return {std::move(id), std::move(v)};
}

FeatureTable read_features(const fs::path& path) {
  auto in = open_in(path);
  std::string header;
  if (!std::getline(in, header)) throw InputError(path.string() + ": empty feature file");
  int dim = -1;
  FeatureTable table;
  bool have_scheme = false;
  for (const auto& tok : split(trim(header), ' ')) {
    if (tok.rfind("dim=", 0) == 0) dim = static_cast<int>(parse_int(tok.substr(4)));
    else if (tok.rfind("scheme=", 0) == 0) {
      table.scheme = parse_scheme(tok.substr(7));
      have_scheme = true;
    }
  }
  if (dim < 1 || !have_scheme)
    throw InputError(path.string() + ": bad header, expected 'dim=<d> scheme=<name>'");
  if (scheme_dim(table.scheme) && scheme_dim(table.scheme) != dim)
    throw InputError(path.string() + ": dim does not match scheme");

  std::vector<Vector> rows;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto [id, v] = parse_feature_line(line, dim);
      table.ids.push_back(std::move(id));
      rows.push_back(std::move(v));
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  table.values.resize(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    table.values.row(static_cast<Index>(i)) = rows[i].transpose();
  return table;
}

}  // namespace madood

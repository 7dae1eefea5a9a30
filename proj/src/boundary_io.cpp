#include <fstream>
#include <sstream>

#include "madood/boundary.hpp"

namespace madood {

std::string to_string(GateDecision d) {
  return d == GateDecision::in_distribution ? "in_distribution" : "out_of_distribution";
}

std::string to_string(Suspicion s) {
  switch (s) {
    case Suspicion::none: return "none";
    case Suspicion::possible_outlier: return "possible_outlier";
    case Suspicion::highly_suspicious: return "highly_suspicious";
  }
  return "?";
}

std::string format_boundaries(const BoundarySetd& set) {
  std::ostringstream out;
  out << "K=" << set.num_classes() << " dim=" << set.embedding_dim
      << " band=" << format_double(set.band) << '\n';
  for (const auto& b : set.boundaries) {
    out << b.class_id << '\t' << format_double(b.sigma_iso) << '\t' << format_double(b.dist_mean)
        << '\t' << format_double(b.dist_std) << '\t' << b.n_samples << '\t';
    for (Index j = 0; j < b.centroid.size(); ++j) out << (j ? "," : "") << format_double(b.centroid[j]);
    out << '\n';
  }
  return out.str();
}

BoundarySetd parse_boundaries(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty boundary file");
  long long k = -1, dim = -1;
  double band = 0;
  bool have_band = false;
  for (const auto& tok : split(trim(line), ' ')) {
    if (tok.rfind("K=", 0) == 0) k = parse_int(tok.substr(2));
    else if (tok.rfind("dim=", 0) == 0) dim = parse_int(tok.substr(4));
    else if (tok.rfind("band=", 0) == 0) {
      band = parse_double(tok.substr(5));
      have_band = true;
    }
  }
  if (k < 1 || dim < 1 || !have_band)
    throw InputError("bad boundary header, expected 'K=<k> dim=<d> band=<b>'");

  BoundarySetd set;
  set.embedding_dim = dim;
  set.band = band;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 6) throw InputError("boundary line needs 6 tab-separated fields");
    ClassBoundaryd b;
    b.class_id = static_cast<int>(parse_int(f[0]));
    b.sigma_iso = parse_double(f[1]);
    b.dist_mean = parse_double(f[2]);
    b.dist_std = parse_double(f[3]);
    b.n_samples = parse_int(f[4]);
    auto mu = split(f[5], ',');
    if (static_cast<long long>(mu.size()) != dim) throw InputError("centroid length does not match dim");
    b.centroid.resize(dim);
    for (Index j = 0; j < dim; ++j) b.centroid[j] = parse_double(mu[static_cast<std::size_t>(j)]);
    if (b.class_id != set.num_classes()) throw InputError("boundary class ids must be 0..K-1 in order");
    if (!(b.sigma_iso > 0) || !(b.dist_std > 0) || b.n_samples < 2)
      throw InputError("boundary for class " + f[0] + " violates sigma/std/n invariants");
    set.boundaries.push_back(std::move(b));
  }
  if (set.num_classes() != k) throw InputError("boundary file declares K=" + std::to_string(k) +
                                               " but holds " + std::to_string(set.num_classes()));
  return set;
}

void write_boundaries(const std::filesystem::path& path, const BoundarySetd& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << format_boundaries(set);
  if (!out) throw Error("write failed: " + path.string());
}

BoundarySetd read_boundaries(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read boundaries " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_boundaries(text);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace madood

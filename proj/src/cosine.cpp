#include "qf/cosine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "qf/parallel.hpp"
#include "qf/rng.hpp"

namespace qf {

namespace {

constexpr std::size_t kDocBlock = 16;
constexpr std::size_t kRefBlock = 256;

double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

// Eight float lanes, folded in double at the end.
inline double dot(const float* a, const float* b, std::size_t n) {
  float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  double s = 0.0;
  for (float l : lanes) s += l;
  for (; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

void ReferenceSet::save(const std::filesystem::path& path) const {
  EmbeddingMatrix m = vectors;
  nlohmann::json ext{{"kind", "reference_set"}, {"k", requested_k}, {"seed", seed}};
  if (const auto model = vectors.model_tag(); !model.empty()) ext["model"] = model;
  m.extension = ext.dump();
  write_embeddings(m, path);
}

ReferenceSet ReferenceSet::load(const std::filesystem::path& path) {
  ReferenceSet r;
  r.vectors = read_embeddings(path);
  auto j = nlohmann::json::parse(r.vectors.extension, nullptr, false);
  if (j.is_discarded() || j.value("kind", "") != "reference_set")
    throw DataError(path.string() + ": not a reference-set file");
  r.requested_k = j.value("k", r.vectors.rows());
  r.seed = j.value("seed", std::uint64_t{0});
  for (std::size_t i = 0; i < r.vectors.rows(); ++i)
    if (std::abs(l2_norm(r.vectors.row(i)) - 1.0) > 1e-5)
      throw DataError(path.string() + ": reference row '" + r.vectors.ids[i] + "' is not unit norm");
  return r;
}

ReferenceSet build_reference_set(const EmbeddingMatrix& positives, std::size_t k, std::uint64_t seed) {
  if (positives.rows() == 0) throw DataError("reference set needs at least one positive embedding");
  if (k == 0) throw ConfigError("K must be > 0");
  ReferenceSet refs;
  refs.requested_k = k;
  refs.seed = seed;
  refs.vectors.dim = positives.dim;
  if (const auto model = positives.model_tag(); !model.empty())
    refs.vectors.extension = nlohmann::json{{"model", model}}.dump();

  std::vector<std::size_t> order(positives.rows());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  std::size_t zero = 0;
  for (std::size_t idx : order) {
    if (refs.vectors.rows() == k) break;
    const auto row = positives.row(idx);
    const double n = l2_norm(row);
    if (n == 0.0) {
      ++zero;
      continue;
    }
    refs.vectors.ids.push_back(positives.ids[idx]);
    for (float x : row) refs.vectors.values.push_back(static_cast<float>(x / n));
  }
  if (refs.vectors.rows() == 0) throw DataError("every positive embedding has zero norm");
  if (zero > 0) refs.warnings.push_back("skipped " + std::to_string(zero) + " zero-norm positive embeddings");
  if (refs.vectors.rows() < k)
    refs.warnings.push_back("only " + std::to_string(refs.vectors.rows()) + " usable positives for K=" +
                            std::to_string(k));
  return refs;
}

CosineScores score_cosine(const ReferenceSet& refs, const EmbeddingMatrix& docs, std::size_t jobs) {
  if (refs.vectors.dim != docs.dim)
    throw DataError("reference dimension " + std::to_string(refs.vectors.dim) + " does not match documents " +
                    std::to_string(docs.dim));
  if (refs.size() == 0) throw DataError("empty reference set");
  const std::size_t dim = docs.dim;
  const std::size_t n_docs = docs.rows();
  const std::size_t n_refs = refs.size();
  std::vector<double> best(n_docs, -std::numeric_limits<double>::infinity());
  std::vector<double> norms(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) norms[i] = l2_norm(docs.row(i));

  const std::size_t n_blocks = (n_docs + kDocBlock - 1) / kDocBlock;
  parallel_for(n_blocks, jobs, [&](std::size_t bb, std::size_t be) {
    for (std::size_t blk = bb; blk < be; ++blk) {
      const std::size_t d0 = blk * kDocBlock;
      const std::size_t d1 = std::min(n_docs, d0 + kDocBlock);
      for (std::size_t r0 = 0; r0 < n_refs; r0 += kRefBlock) {
        const std::size_t r1 = std::min(n_refs, r0 + kRefBlock);
        for (std::size_t d = d0; d < d1; ++d) {
          if (norms[d] == 0.0) continue;
          const float* dv = docs.values.data() + d * dim;
          double m = best[d];
          for (std::size_t r = r0; r < r1; ++r) m = std::max(m, dot(dv, refs.vectors.values.data() + r * dim, dim));
          best[d] = m;
        }
      }
    }
  });

  CosineScores out;
  out.table.scorer = "cosine";
  out.table.entries.reserve(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) {
    double s = -1.0;
    if (norms[i] == 0.0) {
      out.zero_norm_ids.push_back(docs.ids[i]);
    } else {
      s = std::clamp(best[i] / norms[i], -1.0, 1.0);
    }
    out.table.entries.push_back({docs.ids[i], s});
  }
  return out;
}

}  // namespace qf

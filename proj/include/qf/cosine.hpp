#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qf/embedding_store.hpp"
#include "qf/scores.hpp"

namespace qf {

inline constexpr std::size_t kDefaultReferenceCount = 8192;

// K positive embeddings, each L2-normalised. Persisted as a .embx file whose
// extension block records kind, K and seed.
struct ReferenceSet {
  std::size_t requested_k = kDefaultReferenceCount;
  std::uint64_t seed = 0;
  EmbeddingMatrix vectors;
  std::vector<std::string> warnings;

  std::size_t size() const { return vectors.rows(); }

  void save(const std::filesystem::path& path) const;
  static ReferenceSet load(const std::filesystem::path& path);
};

// Samples min(K, n) rows without replacement (seeded), skipping zero-norm
// rows with a warning. Throws DataError if every row has zero norm.
ReferenceSet build_reference_set(const EmbeddingMatrix& positives, std::size_t k, std::uint64_t seed);

struct CosineScores {
  ScoreTable table;
  std::vector<std::string> zero_norm_ids;  // scored -1
};

// score(d) = max over references of cos(d, ref), clamped to [-1, 1].
CosineScores score_cosine(const ReferenceSet& refs, const EmbeddingMatrix& docs, std::size_t jobs = 1);

}  // namespace qf

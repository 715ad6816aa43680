#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qf/corpus.hpp"

namespace qf {

// Version tag of the normalisation rules below. Indexes carry it and scans
// refuse indexes built under a different tag.
inline constexpr std::string_view kNormalizationTag = "nfc-lower-strip-PS-ws/1";
inline constexpr int kDefaultGramSize = 13;

// NFC, lowercase, drop Unicode P* and S* codepoints, split on White_Space.
std::vector<std::string> normalize_for_ngrams(std::string_view text);

// Fingerprint of one window: FNV-1a-64 over the tokens joined by U+241F.
std::uint64_t gram_fingerprint(std::span<const std::string> window);

// Fingerprints of every n-token window, left to right. Hashes each window in
// place from one joined buffer instead of rebuilding the join per window.
std::vector<std::uint64_t> window_fingerprints(const std::vector<std::string>& tokens, int n);

struct BenchmarkSource {
  std::string name;
  std::filesystem::path path;
  std::vector<std::string> fields{"text"};
};

class NgramIndex {
 public:
  NgramIndex() = default;
  NgramIndex(int n, std::vector<std::uint64_t> grams, std::vector<std::string> sources,
             std::string tag = std::string(kNormalizationTag));

  int n() const { return n_; }
  const std::string& tag() const { return tag_; }
  const std::vector<std::string>& sources() const { return sources_; }
  std::size_t size() const { return grams_.size(); }
  bool empty() const { return grams_.empty(); }
  bool contains(std::uint64_t fp) const;
  const std::vector<std::uint64_t>& grams() const { return grams_; }

  // Benchmark that contributed a fingerprint first ("" if unknown).
  const std::string& origin(std::uint64_t fp) const;

  void save(const std::filesystem::path& path) const;
  static NgramIndex load(const std::filesystem::path& path);

 private:
  int n_ = kDefaultGramSize;
  std::vector<std::uint64_t> grams_;        // sorted, unique
  std::vector<std::uint16_t> origin_;       // parallel to grams_, index into sources_
  std::vector<std::string> sources_;
  std::string tag_{kNormalizationTag};

  friend struct IndexBuilder;
};

struct IndexBuildReport {
  std::map<std::string, std::uint64_t> texts;        // per benchmark
  std::map<std::string, std::uint64_t> short_texts;  // fewer than n tokens, contribute nothing
  std::map<std::string, std::uint64_t> grams;        // windows contributed (before dedup)
  std::uint64_t unique_grams = 0;
  nlohmann::json to_json() const;
};

// Throws ConfigError if n < 2 and DataError if no text yields a gram.
NgramIndex build_index(const std::vector<BenchmarkSource>& benchmarks, int n, IndexBuildReport* report = nullptr);
// In-memory variant: (benchmark name, text) pairs.
NgramIndex build_index_from_texts(const std::vector<std::pair<std::string, std::string>>& texts, int n,
                                  IndexBuildReport* report = nullptr);

struct ContaminationHit {
  std::string doc_id;
  std::string gram;  // matched window, normalised tokens joined by spaces
  std::string benchmark;
};

struct DecontReport {
  std::uint64_t total_docs = 0;
  std::uint64_t removed_docs = 0;
  std::map<std::string, std::uint64_t> benchmark_hits;  // flagged documents per benchmark (first hit)
  std::vector<ContaminationHit> samples;
  double contamination_rate() const;
  nlohmann::json to_json() const;
};

// First window of `text` found in the index, if any.
std::optional<ContaminationHit> find_contamination(const NgramIndex& index, std::string_view text);

std::vector<Document> decontaminate(const std::vector<Document>& docs, const NgramIndex& index, DecontReport* report,
                                    std::size_t max_samples = 20);

DecontReport decontaminate_file(const std::filesystem::path& docs, const NgramIndex& index,
                                const std::filesystem::path& out, std::size_t jobs = 1,
                                std::size_t max_samples = 20);

}  // namespace qf

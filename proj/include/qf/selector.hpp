#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qf/corpus.hpp"
#include "qf/scores.hpp"

namespace qf {

inline constexpr std::string_view kTiePolicy = "score_desc_then_id_asc";

struct SelectionPlan {
  double retention = 1.0;  // p in (0, 1]
  std::uint64_t total = 0;
  double threshold = 0.0;  // score of the last retained document
  std::vector<std::string> retained;  // in ranking order
  std::string tie_policy{kTiePolicy};
  std::string scorer;
  std::string score_config_hash;
  std::string config_hash;

  nlohmann::json to_json() const;
  static SelectionPlan from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SelectionPlan load(const std::filesystem::path& path);
};

// ceil(p * n), with products within 1e-9 of an integer treated as exact.
std::uint64_t retained_count(double p, std::uint64_t n);

// Keeps the top ceil(p*N) documents by (score desc, id asc).
SelectionPlan plan_selection(const ScoreTable& scores, double p);

// Replays a score stream (id, score) each time it is invoked.
using ScoreSource = std::function<void(const std::function<void(std::string_view, double)>&)>;

// Two-pass histogram variant for tables that do not fit in memory: pass one
// bins order-preserving score keys, pass two keeps everything above the
// boundary bin and sorts only the boundary bin. Identical result to
// plan_selection.
SelectionPlan plan_selection_two_pass(const ScoreSource& source, double p);
SelectionPlan plan_selection_two_pass(const std::filesystem::path& score_tsv, double p);

struct BudgetRetention {
  double raw = 1.0;        // min(1, target / total)
  double fraction = 1.0;   // max(min_fraction, raw)
  int percent = 100;       // fraction rounded to a whole percent
  bool floored = false;    // min_fraction was binding
};

// Retention that yields ~target_tokens assuming tokens are spread uniformly
// over documents. min_fraction expresses a fixed top-p floor (0 = none).
BudgetRetention retention_for_budget(const CorpusManifest& manifest, double target_tokens, double min_fraction = 0.0);

struct FilterStats {
  std::uint64_t input_docs = 0;
  std::uint64_t input_tokens = 0;
  std::uint64_t retained_docs = 0;
  std::uint64_t retained_tokens = 0;
  double doc_fraction() const;
  double token_fraction() const;
  nlohmann::json to_json() const;
};

// Streams `docs`, writing plan-retained documents to `out` in input order.
FilterStats filter_corpus(const std::filesystem::path& docs, const SelectionPlan& plan,
                          const std::filesystem::path& out);
std::vector<Document> filter_documents(const std::vector<Document>& docs, const SelectionPlan& plan,
                                       FilterStats* stats = nullptr);

struct ReplayStats {
  std::uint64_t output_docs = 0;
  std::uint64_t raw_docs = 0;
  std::uint64_t filtered_docs = 0;
  std::uint64_t filtered_dropped = 0;
  std::uint64_t reidentified = 0;
  double rate = 0.0;
  nlohmann::json to_json() const;
};

// Output of M documents of which round(r*M) are drawn uniformly from `raw`;
// M is the largest size the inputs allow. Raw documents are tagged with
// meta replay=1 and re-identified as "replay/<id>" on id collision. r = 0
// returns `filtered` unchanged.
std::vector<Document> mix_replay(const std::vector<Document>& filtered, const std::vector<Document>& raw, double r,
                                 std::uint64_t seed, ReplayStats* stats = nullptr);

ReplayStats mix_replay_files(const std::filesystem::path& filtered, const std::filesystem::path& raw, double r,
                             std::uint64_t seed, const std::filesystem::path& out);

}  // namespace qf

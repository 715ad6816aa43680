#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace qf {

struct ScoreEntry {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const ScoreEntry&) const = default;
};

// Per-document scores in corpus order. File form is TSV "doc_id\tscore" with a
// leading "# scorer=<name>\tconfig=<hash>" comment line.
struct ScoreTable {
  std::string scorer;
  std::string config_hash;
  std::vector<ScoreEntry> entries;

  // Throws DataError on duplicate ids or non-finite scores.
  void validate() const;
};

void write_score_table(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable read_score_table(const std::filesystem::path& path);

// Scores are printed with 17 significant digits so the TSV round-trips doubles exactly.
std::string format_score(double v);

}  // namespace qf

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qf/corpus.hpp"

namespace qf {

// Whitespace-token length statistics. std is the population deviation.
struct LengthStats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;
  std::uint64_t min = 0;
  std::uint64_t max = 0;
  std::uint64_t total = 0;

  nlohmann::json to_json() const;
};

// Throws DataError on an empty input.
LengthStats length_stats(std::vector<std::uint64_t> counts);
LengthStats length_stats(const std::vector<Document>& docs);
LengthStats length_stats_file(const std::filesystem::path& docs, std::size_t jobs = 1);

enum class Direction { higher_is_better, lower_is_better };

// values[task][approach].
struct MetricTable {
  std::vector<std::string> approaches;
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> values;
  Direction direction = Direction::higher_is_better;

  // Throws DataError unless rectangular with finite cells.
  void validate() const;
};

// Header row: a label cell then approach names. Each further row: task name then values.
MetricTable read_metric_table_csv(const std::filesystem::path& path,
                                  Direction direction = Direction::higher_is_better);
MetricTable parse_metric_table_csv(const std::string& text, Direction direction = Direction::higher_is_better);

// 1-based ranks within one task; tied values share the mean of their positions.
std::vector<double> rank_row(const std::vector<double>& row, Direction direction);

// Per-approach mean of rank_row over tasks, in table.approaches order.
std::vector<double> average_rank(const MetricTable& table);

struct FilterRun {
  std::string name;
  std::filesystem::path corpus;
};

struct FilterComparison {
  std::string name;
  LengthStats stats;
  double doc_fraction = 1.0;
  double token_fraction = 1.0;
};

struct ComparisonReport {
  FilterComparison baseline;
  std::vector<FilterComparison> runs;
  std::optional<MetricTable> metrics;
  std::vector<double> ranks;  // parallel to metrics->approaches

  nlohmann::json to_json() const;
  // name,count,mean,median,std,total_tokens,doc_fraction,token_fraction
  std::string to_csv() const;
};

// Every run must be a subset of the baseline corpus (by id); otherwise DataError.
ComparisonReport compare_filters(const std::vector<Document>& baseline,
                                 const std::vector<std::pair<std::string, std::vector<Document>>>& runs,
                                 const std::optional<MetricTable>& metrics = std::nullopt);
ComparisonReport compare_filter_files(const std::filesystem::path& baseline, const std::vector<FilterRun>& runs,
                                      const std::optional<MetricTable>& metrics = std::nullopt);

}  // namespace qf

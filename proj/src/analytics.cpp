#include "qf/analytics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "qf/error.hpp"
#include "qf/parallel.hpp"

namespace qf {

using nlohmann::json;

json LengthStats::to_json() const {
  return {{"count", count}, {"mean", mean}, {"median", median}, {"std", std},
          {"min", min},     {"max", max},   {"total_tokens", total}};
}

LengthStats length_stats(std::vector<std::uint64_t> counts) {
  if (counts.empty()) throw DataError("length statistics need at least one document");
  LengthStats s;
  s.count = counts.size();
  s.total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  const double n = static_cast<double>(counts.size());
  s.mean = static_cast<double>(s.total) / n;
  double ss = 0.0;
  for (auto c : counts) {
    const double d = static_cast<double>(c) - s.mean;
    ss += d * d;
  }
  s.std = std::sqrt(ss / n);

  const std::size_t mid = counts.size() / 2;
  std::nth_element(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(mid), counts.end());
  const auto upper = counts[mid];
  if (counts.size() % 2 == 1) {
    s.median = static_cast<double>(upper);
  } else {
    const auto lower = *std::max_element(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(mid));
    s.median = (static_cast<double>(lower) + static_cast<double>(upper)) / 2.0;
  }
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

LengthStats length_stats(const std::vector<Document>& docs) {
  std::vector<std::uint64_t> counts;
  counts.reserve(docs.size());
  for (const auto& d : docs) counts.push_back(ws_token_count(d.text));
  return length_stats(std::move(counts));
}

LengthStats length_stats_file(const std::filesystem::path& path, std::size_t jobs) {
  DocumentReader reader(path);
  std::vector<std::uint64_t> counts;
  std::vector<std::string> batch;
  constexpr std::size_t kBatch = 8192;
  auto flush = [&] {
    const std::size_t base = counts.size();
    counts.resize(base + batch.size());
    parallel_for(batch.size(), jobs, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) counts[base + i] = ws_token_count(batch[i]);
    });
    batch.clear();
  };
  Document d;
  while (reader.next(d)) {
    batch.push_back(std::move(d.text));
    if (batch.size() == kBatch) flush();
  }
  flush();
  return length_stats(std::move(counts));
}

void MetricTable::validate() const {
  if (approaches.empty()) throw DataError("metric table has no approaches");
  if (values.size() != tasks.size())
    throw DataError("metric table has " + std::to_string(tasks.size()) + " task names but " +
                    std::to_string(values.size()) + " rows");
  for (std::size_t t = 0; t < values.size(); ++t) {
    if (values[t].size() != approaches.size())
      throw DataError("metric table row '" + tasks[t] + "' has " + std::to_string(values[t].size()) +
                      " cells, expected " + std::to_string(approaches.size()));
    for (double v : values[t])
      if (!std::isfinite(v)) throw DataError("metric table row '" + tasks[t] + "' has a non-finite cell");
  }
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  for (auto& cell : cells) {
    const auto b = cell.find_first_not_of(" \t");
    const auto e = cell.find_last_not_of(" \t");
    cell = b == std::string::npos ? std::string() : cell.substr(b, e - b + 1);
  }
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  auto [p, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || p != end || cell.empty())
    throw DataError("metric table line " + std::to_string(line_no) + ": bad number '" + cell + "'");
  return v;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

MetricTable parse_metric_table_csv(const std::string& text, Direction direction) {
  MetricTable t;
  t.direction = direction;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (header) {
      if (cells.size() < 2) throw DataError("metric table header needs at least one approach");
      t.approaches.assign(cells.begin() + 1, cells.end());
      header = false;
      continue;
    }
    t.tasks.push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_cell(cells[i], line_no));
    t.values.push_back(std::move(row));
  }
  if (header) throw DataError("metric table is empty");
  t.validate();
  return t;
}

MetricTable read_metric_table_csv(const std::filesystem::path& path, Direction direction) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metric_table_csv(ss.str(), direction);
}

std::vector<double> rank_row(const std::vector<double>& row, Direction direction) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  const bool higher = direction == Direction::higher_is_better;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return higher ? row[a] > row[b] : row[a] < row[b]; });
  std::vector<double> ranks(row.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && row[order[j + 1]] == row[order[i]]) ++j;
    // positions i..j (0-based) share the mean of ranks i+1..j+1
    const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

std::vector<double> average_rank(const MetricTable& table) {
  table.validate();
  if (table.approaches.size() < 2) throw DataError("average rank needs at least two approaches");
  if (table.tasks.empty()) throw DataError("average rank needs at least one task");
  std::vector<double> sum(table.approaches.size(), 0.0);
  for (const auto& row : table.values) {
    const auto r = rank_row(row, table.direction);
    for (std::size_t a = 0; a < r.size(); ++a) sum[a] += r[a];
  }
  for (auto& s : sum) s /= static_cast<double>(table.tasks.size());
  return sum;
}

json ComparisonReport::to_json() const {
  auto row = [](const FilterComparison& c) {
    return json{{"name", c.name},
                {"length", c.stats.to_json()},
                {"doc_fraction", c.doc_fraction},
                {"token_fraction", c.token_fraction}};
  };
  json j{{"baseline", row(baseline)}, {"runs", json::array()}};
  for (const auto& r : runs) j["runs"].push_back(row(r));
  if (metrics) {
    json ranks_j = json::object();
    for (std::size_t a = 0; a < metrics->approaches.size(); ++a) ranks_j[metrics->approaches[a]] = ranks[a];
    j["average_rank"] = ranks_j;
    j["metric_tasks"] = metrics->tasks;
  }
  return j;
}

std::string ComparisonReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "name,count,mean,median,std,total_tokens,doc_fraction,token_fraction\n";
  auto line = [&](const FilterComparison& c) {
    out << csv_escape(c.name) << ',' << c.stats.count << ',' << c.stats.mean << ',' << c.stats.median << ','
        << c.stats.std << ',' << c.stats.total << ',' << c.doc_fraction << ',' << c.token_fraction << '\n';
  };
  line(baseline);
  for (const auto& r : runs) line(r);
  return out.str();
}

namespace {

using CountMap = std::unordered_map<std::string, std::uint64_t>;

FilterComparison compare_one(const std::string& name, const std::vector<std::pair<std::string, std::uint64_t>>& run,
                             const CountMap& base, const LengthStats& base_stats) {
  if (run.empty()) throw DataError("filter run '" + name + "' is empty");
  std::vector<std::uint64_t> counts;
  counts.reserve(run.size());
  for (const auto& [id, c] : run) {
    if (!base.contains(id))
      throw DataError("filter run '" + name + "' contains '" + id + "', which is not in the baseline corpus");
    counts.push_back(c);
  }
  FilterComparison fc;
  fc.name = name;
  fc.stats = length_stats(std::move(counts));
  fc.doc_fraction = static_cast<double>(fc.stats.count) / static_cast<double>(base_stats.count);
  fc.token_fraction =
      base_stats.total == 0 ? 0.0 : static_cast<double>(fc.stats.total) / static_cast<double>(base_stats.total);
  return fc;
}

ComparisonReport assemble(const CountMap& base, std::vector<std::uint64_t> base_counts, const std::string& base_name,
                          const std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::uint64_t>>>>& runs,
                          const std::optional<MetricTable>& metrics) {
  if (runs.empty()) throw ConfigError("compare_filters needs at least one run");
  ComparisonReport rep;
  rep.baseline.name = base_name;
  rep.baseline.stats = length_stats(std::move(base_counts));
  for (const auto& [name, run] : runs) rep.runs.push_back(compare_one(name, run, base, rep.baseline.stats));
  if (metrics) {
    rep.metrics = metrics;
    rep.ranks = average_rank(*metrics);
  }
  return rep;
}

}  // namespace

ComparisonReport compare_filters(const std::vector<Document>& baseline,
                                 const std::vector<std::pair<std::string, std::vector<Document>>>& runs,
                                 const std::optional<MetricTable>& metrics) {
  CountMap base;
  std::vector<std::uint64_t> base_counts;
  for (const auto& d : baseline) {
    base_counts.push_back(ws_token_count(d.text));
    if (!base.emplace(d.id, base_counts.back()).second)
      throw DataError("duplicate id '" + d.id + "' in baseline corpus");
  }
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::uint64_t>>>> counted;
  for (const auto& [name, docs] : runs) {
    std::vector<std::pair<std::string, std::uint64_t>> r;
    for (const auto& d : docs) r.emplace_back(d.id, ws_token_count(d.text));
    counted.emplace_back(name, std::move(r));
  }
  return assemble(base, std::move(base_counts), "baseline", counted, metrics);
}

ComparisonReport compare_filter_files(const std::filesystem::path& baseline, const std::vector<FilterRun>& runs,
                                      const std::optional<MetricTable>& metrics) {
  CountMap base;
  std::vector<std::uint64_t> base_counts;
  {
    DocumentReader reader(baseline);
    Document d;
    while (reader.next(d)) {
      base_counts.push_back(ws_token_count(d.text));
      base.emplace(d.id, base_counts.back());
    }
  }
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::uint64_t>>>> counted;
  for (const auto& run : runs) {
    DocumentReader reader(run.corpus);
    Document d;
    std::vector<std::pair<std::string, std::uint64_t>> r;
    while (reader.next(d)) r.emplace_back(d.id, ws_token_count(d.text));
    counted.emplace_back(run.name, std::move(r));
  }
  return assemble(base, std::move(base_counts), "baseline", counted, metrics);
}

}  // namespace qf

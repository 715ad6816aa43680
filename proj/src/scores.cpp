#include "qf/scores.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "qf/error.hpp"

namespace qf {

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ScoreTable::validate() const {
  std::unordered_set<std::string_view> seen;
  seen.reserve(entries.size());
  for (const auto& e : entries) {
    if (!std::isfinite(e.score)) throw DataError("non-finite score for '" + e.doc_id + "'");
    if (!seen.insert(e.doc_id).second) throw DataError("duplicate id '" + e.doc_id + "' in score table");
  }
}

void write_score_table(const ScoreTable& table, const std::filesystem::path& path) {
  table.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "# scorer=" << table.scorer << "\tconfig=" << table.config_hash << '\n';
  for (const auto& e : table.entries) {
    if (e.doc_id.find_first_of("\t\n\r") != std::string::npos)
      throw DataError("doc id '" + e.doc_id + "' contains a tab or newline");
    out << e.doc_id << '\t' << format_score(e.score) << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failure on " + path.string());
}

ScoreTable read_score_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  ScoreTable t;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      // "# key=value\tkey=value"
      std::string_view rest(line);
      rest.remove_prefix(1);
      while (!rest.empty()) {
        while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t')) rest.remove_prefix(1);
        const auto end = rest.find('\t');
        std::string_view kv = rest.substr(0, end);
        rest = end == std::string_view::npos ? std::string_view{} : rest.substr(end + 1);
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) continue;
        const auto key = kv.substr(0, eq);
        const auto value = std::string(kv.substr(eq + 1));
        if (key == "scorer") t.scorer = value;
        if (key == "config") t.config_hash = value;
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected 'doc_id<TAB>score'");
    ScoreEntry e;
    e.doc_id = line.substr(0, tab);
    const char* first = line.data() + tab + 1;
    const char* last = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(first, last, e.score);
    if (ec != std::errc() || ptr != last)
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": bad score value");
    t.entries.push_back(std::move(e));
  }
  t.validate();
  return t;
}

}  // namespace qf

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace qf {

// One corpus record. On disk: one JSON object per line with keys id, lang,
// text; any other string-valued key lands in `meta`.
struct Document {
  std::string id;
  std::string lang;
  std::string text;
  std::map<std::string, std::string> meta;

  bool operator==(const Document&) const = default;
};

struct CorpusManifest {
  std::vector<std::string> paths;
  std::uint64_t doc_count = 0;
  std::uint64_t total_ws_tokens = 0;
  std::string lang;  // empty when documents disagree ("mixed" is never guessed)
};

// Number of maximal runs of non-White_Space codepoints.
std::size_t ws_token_count(std::string_view text);

// Parses one record line. Throws DataError naming `line_no` on failure.
Document parse_document_line(std::string_view line, std::uint64_t line_no);

// Serializes one record to a single line (no trailing newline).
std::string format_document_line(const Document& doc);

struct ReadOptions {
  bool reject_empty_text = false;
};

// Streaming reader. Memory held is one line plus the set of ids seen so far
// (for duplicate detection).
class DocumentReader {
 public:
  explicit DocumentReader(const std::filesystem::path& path, ReadOptions opts = {});

  // Returns false at end of file.
  bool next(Document& doc);

  std::uint64_t line_number() const { return line_no_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  ReadOptions opts_;
  std::ifstream in_;
  std::string line_;
  std::uint64_t line_no_ = 0;
  std::unordered_set<std::string> seen_;
};

// Convenience for small corpora and tests.
std::vector<Document> read_documents(const std::filesystem::path& path, ReadOptions opts = {});

// Exclusive writer for one output file. Rejects duplicate ids.
class DocumentWriter {
 public:
  explicit DocumentWriter(const std::filesystem::path& path);
  DocumentWriter(const DocumentWriter&) = delete;
  DocumentWriter& operator=(const DocumentWriter&) = delete;

  void write(const Document& doc);
  // Flushes and returns the manifest; further writes are an error.
  CorpusManifest finish();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  CorpusManifest manifest_;
  std::unordered_set<std::string> seen_;
  bool lang_mixed_ = false;
  bool finished_ = false;
};

CorpusManifest write_documents(const std::vector<Document>& docs, const std::filesystem::path& path);

// Scans files and sums counts; used for budget math.
CorpusManifest scan_manifest(const std::vector<std::filesystem::path>& paths);

void write_manifest_json(const CorpusManifest& m, const std::filesystem::path& path);
CorpusManifest read_manifest_json(const std::filesystem::path& path);

}  // namespace qf

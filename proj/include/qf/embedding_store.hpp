#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qf/binio.hpp"
#include "qf/corpus.hpp"
#include "qf/error.hpp"

namespace qf {

// .embx layout (little endian):
//   "EMBX1" | dim u32 | count u64 | ext_len u32 | ext (UTF-8 JSON, may be empty)
//   | count x (len u32, id bytes) | count x dim float32, row major
// The extension block carries producer metadata such as the encoder tag.
inline constexpr std::size_t kDefaultEmbeddingDim = 768;

class EmbxError : public DataError {
 public:
  enum class Kind { bad_magic, truncated, trailing_bytes, duplicate_id, non_finite, dim_mismatch, model_mismatch };
  EmbxError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct EmbeddingMatrix {
  std::size_t dim = kDefaultEmbeddingDim;
  std::vector<std::string> ids;
  std::vector<float> values;  // ids.size() x dim
  std::string extension;      // producer metadata JSON, "" if absent

  std::size_t rows() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * dim, dim}; }

  // Encoder tag from the extension block ("model" key), "" if absent.
  std::string model_tag() const;
};

struct EmbeddingWriteSummary {
  std::filesystem::path path;
  std::size_t dim = 0;
  std::uint64_t count = 0;
};

// Streams rows into a .embx file. Vectors are spooled to a sibling temp file
// and the id table is written ahead of them on finish().
class EmbeddingWriter {
 public:
  EmbeddingWriter(const std::filesystem::path& path, std::size_t dim, std::string extension = {});
  ~EmbeddingWriter();
  EmbeddingWriter(const EmbeddingWriter&) = delete;
  EmbeddingWriter& operator=(const EmbeddingWriter&) = delete;

  void write(const std::string& id, std::span<const float> vec);
  EmbeddingWriteSummary finish();

 private:
  std::filesystem::path path_;
  std::filesystem::path spool_path_;
  std::size_t dim_;
  std::string extension_;
  std::ofstream spool_;
  std::vector<std::string> ids_;
  bool finished_ = false;
};

EmbeddingWriteSummary write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

// Row-at-a-time reader; memory is the id table plus one row.
class EmbeddingReader {
 public:
  explicit EmbeddingReader(const std::filesystem::path& path);

  std::size_t dim() const { return dim_; }
  std::uint64_t count() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& extension() const { return extension_; }

  // Fills `out` (size dim) with the next row; false after the last row.
  bool next(std::span<float> out);

 private:
  BinaryReader in_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::string extension_;
  std::uint64_t next_row_ = 0;
};

EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

struct AlignmentReport {
  std::vector<std::string> missing;  // documents without an embedding row
  std::vector<std::string> orphans;  // embedding rows without a document

  bool empty() const { return missing.empty() && orphans.empty(); }
};

AlignmentReport align(const std::vector<std::string>& embedding_ids, const std::vector<std::string>& doc_ids);
AlignmentReport align(const EmbeddingMatrix& m, const std::vector<Document>& docs);

// Row indices of `ids` within `m`; throws DataError naming the first missing id.
std::vector<std::size_t> lookup_rows(const EmbeddingMatrix& m, const std::vector<std::string>& ids);

}  // namespace qf

#include "qf/embedding_store.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace qf {

namespace {

constexpr std::string_view kEmbxMagic = "EMBX1";

void check_finite(std::span<const float> v, const std::string& id, const std::string& where) {
  for (float x : v)
    if (!std::isfinite(x)) throw EmbxError(EmbxError::Kind::non_finite, where + ": non-finite value in row '" + id + "'");
}

}  // namespace

std::string EmbeddingMatrix::model_tag() const {
  if (extension.empty()) return {};
  auto j = nlohmann::json::parse(extension, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return {};
  return j.value("model", "");
}

EmbeddingWriter::EmbeddingWriter(const std::filesystem::path& path, std::size_t dim, std::string extension)
    : path_(path), spool_path_(path.string() + ".spool"), dim_(dim), extension_(std::move(extension)) {
  if (dim_ == 0) throw DataError("embedding dimension must be > 0");
  spool_.open(spool_path_, std::ios::binary | std::ios::trunc);
  if (!spool_) throw IoError("cannot open " + spool_path_.string() + " for writing");
}

EmbeddingWriter::~EmbeddingWriter() {
  if (!finished_) {
    spool_.close();
    std::error_code ec;
    std::filesystem::remove(spool_path_, ec);
  }
}

void EmbeddingWriter::write(const std::string& id, std::span<const float> vec) {
  if (finished_) throw std::logic_error("EmbeddingWriter used after finish()");
  if (vec.size() != dim_)
    throw EmbxError(EmbxError::Kind::dim_mismatch, "row '" + id + "' has dimension " + std::to_string(vec.size()) +
                                                       ", expected " + std::to_string(dim_));
  check_finite(vec, id, path_.string());
  spool_.write(reinterpret_cast<const char*>(vec.data()), static_cast<std::streamsize>(vec.size_bytes()));
  if (!spool_) throw IoError("write failure on " + spool_path_.string());
  ids_.push_back(id);
}

EmbeddingWriteSummary EmbeddingWriter::finish() {
  if (finished_) throw std::logic_error("EmbeddingWriter finished twice");
  spool_.close();
  {
    std::unordered_set<std::string_view> seen;
    for (const auto& id : ids_)
      if (!seen.insert(id).second)
        throw EmbxError(EmbxError::Kind::duplicate_id, "duplicate embedding id '" + id + "'");
  }
  BinaryWriter w(path_);
  w.bytes(kEmbxMagic.data(), kEmbxMagic.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim_));
  w.put<std::uint64_t>(ids_.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(extension_.size()));
  w.bytes(extension_.data(), extension_.size());
  for (const auto& id : ids_) w.put_string(id);
  {
    std::ifstream spool(spool_path_, std::ios::binary);
    std::vector<char> buf(1 << 16);
    while (spool) {
      spool.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      w.bytes(buf.data(), static_cast<std::size_t>(spool.gcount()));
    }
  }
  w.close();
  std::filesystem::remove(spool_path_);
  finished_ = true;
  return {path_, dim_, ids_.size()};
}

EmbeddingWriteSummary write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  if (m.values.size() != m.ids.size() * m.dim)
    throw EmbxError(EmbxError::Kind::dim_mismatch, "matrix payload does not match ids x dim");
  EmbeddingWriter w(path, m.dim, m.extension);
  for (std::size_t i = 0; i < m.rows(); ++i) w.write(m.ids[i], m.row(i));
  return w.finish();
}

EmbeddingReader::EmbeddingReader(const std::filesystem::path& path) : in_(path) {
  try {
    in_.expect_magic(kEmbxMagic);
  } catch (const TruncatedError&) {
    throw EmbxError(EmbxError::Kind::bad_magic, path.string() + ": not an EMBX1 file");
  } catch (const DataError& e) {
    throw EmbxError(EmbxError::Kind::bad_magic, e.what());
  }
  try {
    dim_ = in_.get<std::uint32_t>();
    const auto count = in_.get<std::uint64_t>();
    const auto ext_len = in_.get<std::uint32_t>();
    extension_.resize(ext_len);
    in_.bytes(extension_.data(), ext_len);
    ids_.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
    std::unordered_set<std::string> seen;
    for (std::uint64_t i = 0; i < count; ++i) {
      ids_.push_back(in_.get_string());
      if (!seen.insert(ids_.back()).second)
        throw EmbxError(EmbxError::Kind::duplicate_id, path.string() + ": duplicate id '" + ids_.back() + "'");
    }
  } catch (const TruncatedError& e) {
    throw EmbxError(EmbxError::Kind::truncated, e.what());
  }
  if (dim_ == 0) throw EmbxError(EmbxError::Kind::dim_mismatch, path.string() + ": zero dimension");
  if (ids_.empty() && !in_.at_eof())
    throw EmbxError(EmbxError::Kind::trailing_bytes, path.string() + ": trailing bytes after the header");
}

bool EmbeddingReader::next(std::span<float> out) {
  if (next_row_ >= ids_.size()) return false;
  if (out.size() != dim_) throw std::invalid_argument("row buffer has wrong dimension");
  try {
    in_.get_array(out);
  } catch (const TruncatedError& e) {
    throw EmbxError(EmbxError::Kind::truncated, e.what());
  }
  check_finite(out, ids_[next_row_], in_.path().string());
  ++next_row_;
  if (next_row_ == ids_.size() && !in_.at_eof())
    throw EmbxError(EmbxError::Kind::trailing_bytes, in_.path().string() + ": trailing bytes after the last row");
  return true;
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  EmbeddingReader r(path);
  EmbeddingMatrix m;
  m.dim = r.dim();
  m.ids = r.ids();
  m.extension = r.extension();
  m.values.resize(m.ids.size() * m.dim);
  for (std::size_t i = 0; i < m.rows(); ++i) r.next(m.row(i));
  return m;
}

AlignmentReport align(const std::vector<std::string>& embedding_ids, const std::vector<std::string>& doc_ids) {
  AlignmentReport rep;
  std::unordered_set<std::string_view> emb(embedding_ids.begin(), embedding_ids.end());
  std::unordered_set<std::string_view> docs(doc_ids.begin(), doc_ids.end());
  for (const auto& id : doc_ids)
    if (!emb.count(id)) rep.missing.push_back(id);
  for (const auto& id : embedding_ids)
    if (!docs.count(id)) rep.orphans.push_back(id);
  return rep;
}

AlignmentReport align(const EmbeddingMatrix& m, const std::vector<Document>& docs) {
  std::vector<std::string> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(d.id);
  return align(m.ids, ids);
}

std::vector<std::size_t> lookup_rows(const EmbeddingMatrix& m, const std::vector<std::string>& ids) {
  std::unordered_map<std::string_view, std::size_t> pos;
  pos.reserve(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) pos.emplace(m.ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = pos.find(id);
    if (it == pos.end()) throw DataError("missing embedding for '" + id + "'");
    rows.push_back(it->second);
  }
  return rows;
}

}  // namespace qf

#include "qf/corpus.hpp"

#include <json.hpp>

#include "qf/error.hpp"
#include "qf/unicode.hpp"

namespace qf {

using nlohmann::json;

std::size_t ws_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto b = static_cast<unsigned char>(text[pos]);
    bool ws;
    if (b < 0x80) {
      ws = b == 0x20 || (b >= 0x09 && b <= 0x0D);
      ++pos;
    } else {
      char32_t cp = 0;
      ws = unicode::decode_next(text, pos, cp) && unicode::is_white_space(cp);
    }
    if (ws) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

Document parse_document_line(std::string_view line, std::uint64_t line_no) {
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("line " + std::to_string(line_no) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw fail("record is not a JSON object");

  Document doc;
  for (auto& [key, value] : j.items()) {
    if (key == "id" || key == "lang" || key == "text") {
      if (!value.is_string()) throw fail("field '" + key + "' must be a string");
      auto& slot = key == "id" ? doc.id : key == "lang" ? doc.lang : doc.text;
      slot = value.get<std::string>();
    } else {
      doc.meta[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  if (!j.contains("id") || doc.id.empty()) throw fail("missing or empty 'id'");
  if (!j.contains("lang") || doc.lang.empty()) throw fail("missing or empty 'lang'");
  if (!j.contains("text")) throw fail("missing 'text'");
  if (!unicode::is_valid_utf8(doc.text)) throw fail("text is not valid UTF-8");
  return doc;
}

std::string format_document_line(const Document& doc) {
  auto str = [](const std::string& s) { return json(s).dump(-1, ' ', false, json::error_handler_t::strict); };
  std::string out;
  out.reserve(doc.text.size() + doc.id.size() + 64);
  try {
    out += "{\"id\":";
    out += str(doc.id);
    out += ",\"lang\":";
    out += str(doc.lang);
    out += ",\"text\":";
    out += str(doc.text);
    for (const auto& [k, v] : doc.meta) {
      out += ',';
      out += str(k);
      out += ':';
      out += str(v);
    }
    out += '}';
  } catch (const json::type_error&) {
    throw DataError("document '" + doc.id + "' contains invalid UTF-8");
  }
  return out;
}

DocumentReader::DocumentReader(const std::filesystem::path& path, ReadOptions opts)
    : path_(path), opts_(opts), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path.string());
}

bool DocumentReader::next(Document& doc) {
  while (std::getline(in_, line_)) {
    ++line_no_;
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    if (line_.empty()) continue;
    doc = parse_document_line(line_, line_no_);
    if (!seen_.insert(doc.id).second)
      throw DataError(path_.string() + ": line " + std::to_string(line_no_) + ": duplicate id '" + doc.id + "'");
    if (opts_.reject_empty_text && ws_token_count(doc.text) == 0)
      throw DataError(path_.string() + ": line " + std::to_string(line_no_) + ": empty text in '" + doc.id + "'");
    return true;
  }
  if (in_.bad()) throw IoError("read failure on " + path_.string());
  return false;
}

std::vector<Document> read_documents(const std::filesystem::path& path, ReadOptions opts) {
  DocumentReader reader(path, opts);
  std::vector<Document> docs;
  Document d;
  while (reader.next(d)) docs.push_back(std::move(d));
  return docs;
}

DocumentWriter::DocumentWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  manifest_.paths.push_back(path.string());
}

void DocumentWriter::write(const Document& doc) {
  if (finished_) throw std::logic_error("DocumentWriter used after finish()");
  if (doc.id.empty()) throw DataError("document with empty id");
  if (doc.lang.empty()) throw DataError("document '" + doc.id + "' has empty lang");
  if (!seen_.insert(doc.id).second) throw DataError("duplicate id '" + doc.id + "' written to " + path_.string());
  out_ << format_document_line(doc) << '\n';
  if (!out_) throw IoError("write failure on " + path_.string());
  if (manifest_.doc_count == 0) {
    manifest_.lang = doc.lang;
  } else if (!lang_mixed_ && doc.lang != manifest_.lang) {
    lang_mixed_ = true;
    manifest_.lang.clear();
  }
  ++manifest_.doc_count;
  manifest_.total_ws_tokens += ws_token_count(doc.text);
}

CorpusManifest DocumentWriter::finish() {
  if (!finished_) {
    out_.flush();
    if (!out_) throw IoError("flush failure on " + path_.string());
    out_.close();
    finished_ = true;
  }
  return manifest_;
}

CorpusManifest write_documents(const std::vector<Document>& docs, const std::filesystem::path& path) {
  DocumentWriter w(path);
  for (const auto& d : docs) w.write(d);
  return w.finish();
}

CorpusManifest scan_manifest(const std::vector<std::filesystem::path>& paths) {
  CorpusManifest m;
  bool mixed = false;
  for (const auto& p : paths) {
    m.paths.push_back(p.string());
    DocumentReader reader(p);
    Document d;
    while (reader.next(d)) {
      if (m.doc_count == 0) {
        m.lang = d.lang;
      } else if (!mixed && d.lang != m.lang) {
        mixed = true;
        m.lang.clear();
      }
      ++m.doc_count;
      m.total_ws_tokens += ws_token_count(d.text);
    }
  }
  return m;
}

void write_manifest_json(const CorpusManifest& m, const std::filesystem::path& path) {
  json j{{"paths", m.paths}, {"doc_count", m.doc_count}, {"total_ws_tokens", m.total_ws_tokens}, {"lang", m.lang}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

CorpusManifest read_manifest_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
    CorpusManifest m;
    m.paths = j.at("paths").get<std::vector<std::string>>();
    m.doc_count = j.at("doc_count").get<std::uint64_t>();
    m.total_ws_tokens = j.at("total_ws_tokens").get<std::uint64_t>();
    m.lang = j.value("lang", "");
    return m;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid manifest: " + e.what());
  }
}

}  // namespace qf

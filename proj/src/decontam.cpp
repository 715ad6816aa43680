#include "qf/decontam.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "qf/binio.hpp"
#include "qf/error.hpp"
#include "qf/hash.hpp"
#include "qf/parallel.hpp"
#include "qf/unicode.hpp"

namespace qf {

using nlohmann::json;

namespace {

constexpr std::string_view kIndexMagic = "NGIX1";

std::string join_spaces(const std::vector<std::string>& tokens, std::size_t begin, std::size_t n) {
  std::string s;
  for (std::size_t i = begin; i < begin + n; ++i) {
    if (i > begin) s += ' ';
    s += tokens[i];
  }
  return s;
}

std::vector<std::string> record_texts(const json& raw, const std::vector<std::string>& fields) {
  std::vector<std::string> parts;
  for (const auto& f : fields) {
    auto it = raw.find(f);
    if (it == raw.end()) continue;
    if (it->is_string()) {
      parts.push_back(it->get<std::string>());
    } else if (it->is_array()) {
      for (const auto& m : *it)
        if (m.is_string()) parts.push_back(m.get<std::string>());
    }
  }
  return parts;
}

}  // namespace

std::vector<std::string> normalize_for_ngrams(std::string_view text) {
  const std::string norm = unicode::normalize_nfc_lower_strip(text);
  std::vector<std::string> out;
  for (auto t : unicode::split_whitespace(norm)) out.emplace_back(t);
  return out;
}

std::uint64_t gram_fingerprint(std::span<const std::string> window) { return fnv1a64_joined(window); }

std::vector<std::uint64_t> window_fingerprints(const std::vector<std::string>& tokens, int n) {
  std::vector<std::uint64_t> out;
  const auto un = static_cast<std::size_t>(n);
  if (n < 1 || tokens.size() < un) return out;
  std::string buf;
  std::vector<std::size_t> start(tokens.size()), end(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) buf += kGramSeparator;
    start[i] = buf.size();
    buf += tokens[i];
    end[i] = buf.size();
  }
  const std::string_view all(buf);
  out.reserve(tokens.size() - un + 1);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i)
    out.push_back(fnv1a64(all.substr(start[i], end[i + un - 1] - start[i])));
  return out;
}

NgramIndex::NgramIndex(int n, std::vector<std::uint64_t> grams, std::vector<std::string> sources, std::string tag)
    : n_(n), grams_(std::move(grams)), origin_(grams_.size(), 0), sources_(std::move(sources)), tag_(std::move(tag)) {
  std::sort(grams_.begin(), grams_.end());
  grams_.erase(std::unique(grams_.begin(), grams_.end()), grams_.end());
  origin_.assign(grams_.size(), 0);
}

bool NgramIndex::contains(std::uint64_t fp) const { return std::binary_search(grams_.begin(), grams_.end(), fp); }

const std::string& NgramIndex::origin(std::uint64_t fp) const {
  static const std::string unknown;
  auto it = std::lower_bound(grams_.begin(), grams_.end(), fp);
  if (it == grams_.end() || *it != fp) return unknown;
  const auto o = origin_[static_cast<std::size_t>(it - grams_.begin())];
  return o < sources_.size() ? sources_[o] : unknown;
}

void NgramIndex::save(const std::filesystem::path& path) const {
  BinaryWriter w(path);
  w.bytes(kIndexMagic.data(), kIndexMagic.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n_));
  w.put_string(tag_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sources_.size()));
  for (const auto& s : sources_) w.put_string(s);
  w.put<std::uint64_t>(grams_.size());
  w.put_array<std::uint64_t>(grams_);
  w.put_array<std::uint16_t>(origin_);
  w.close();
}

NgramIndex NgramIndex::load(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic(kIndexMagic);
  NgramIndex idx;
  idx.n_ = static_cast<int>(r.get<std::uint32_t>());
  idx.tag_ = r.get_string(4096);
  const auto n_sources = r.get<std::uint32_t>();
  if (n_sources > 65535) throw DataError(path.string() + ": too many benchmark sources");
  for (std::uint32_t i = 0; i < n_sources; ++i) idx.sources_.push_back(r.get_string(4096));
  const auto count = r.get<std::uint64_t>();
  idx.grams_.resize(count);
  r.get_array<std::uint64_t>(idx.grams_);
  idx.origin_.resize(count);
  r.get_array<std::uint16_t>(idx.origin_);
  if (!r.at_eof()) throw DataError(path.string() + ": trailing bytes after index payload");
  if (idx.n_ < 2) throw DataError(path.string() + ": gram size must be >= 2");
  if (!std::is_sorted(idx.grams_.begin(), idx.grams_.end()) ||
      std::adjacent_find(idx.grams_.begin(), idx.grams_.end()) != idx.grams_.end())
    throw DataError(path.string() + ": fingerprints are not sorted and unique");
  return idx;
}

json IndexBuildReport::to_json() const {
  return {{"texts", texts}, {"short_texts", short_texts}, {"grams", grams}, {"unique_grams", unique_grams}};
}

struct IndexBuilder {
  int n;
  std::vector<std::string> sources;
  std::unordered_map<std::uint64_t, std::uint16_t> first_origin;
  IndexBuildReport report;

  void add(const std::string& source, std::string_view text) {
    auto it = std::find(sources.begin(), sources.end(), source);
    if (it == sources.end()) {
      if (sources.size() >= 65535) throw ConfigError("too many benchmark sources");
      sources.push_back(source);
      it = sources.end() - 1;
    }
    const auto origin = static_cast<std::uint16_t>(it - sources.begin());
    ++report.texts[source];
    const auto tokens = normalize_for_ngrams(text);
    if (tokens.size() < static_cast<std::size_t>(n)) {
      ++report.short_texts[source];
      return;
    }
    for (auto fp : window_fingerprints(tokens, n)) {
      first_origin.emplace(fp, origin);
      ++report.grams[source];
    }
  }

  NgramIndex finish() {
    if (first_origin.empty()) throw DataError("no benchmark text yields a " + std::to_string(n) + "-gram");
    std::vector<std::pair<std::uint64_t, std::uint16_t>> all(first_origin.begin(), first_origin.end());
    std::sort(all.begin(), all.end());
    NgramIndex idx;
    idx.n_ = n;
    idx.sources_ = sources;
    idx.grams_.reserve(all.size());
    idx.origin_.reserve(all.size());
    for (auto [fp, o] : all) {
      idx.grams_.push_back(fp);
      idx.origin_.push_back(o);
    }
    report.unique_grams = idx.grams_.size();
    return idx;
  }
};

NgramIndex build_index_from_texts(const std::vector<std::pair<std::string, std::string>>& texts, int n,
                                  IndexBuildReport* report) {
  if (n < 2) throw ConfigError("gram size must be >= 2");
  IndexBuilder b{n, {}, {}, {}};
  for (const auto& [src, text] : texts) b.add(src, text);
  NgramIndex idx = b.finish();
  if (report) *report = std::move(b.report);
  return idx;
}

NgramIndex build_index(const std::vector<BenchmarkSource>& benchmarks, int n, IndexBuildReport* report) {
  if (n < 2) throw ConfigError("gram size must be >= 2");
  IndexBuilder b{n, {}, {}, {}};
  for (const auto& bench : benchmarks) {
    std::ifstream in(bench.path, std::ios::binary);
    if (!in) throw IoError("cannot open benchmark " + bench.path.string());
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      json raw = json::parse(line, nullptr, false);
      if (raw.is_discarded() || !raw.is_object())
        throw DataError(bench.path.string() + ": line " + std::to_string(line_no) + ": malformed record");
      for (const auto& text : record_texts(raw, bench.fields)) b.add(bench.name, text);
    }
  }
  NgramIndex idx = b.finish();
  if (report) *report = std::move(b.report);
  return idx;
}

double DecontReport::contamination_rate() const {
  return total_docs == 0 ? 0.0 : static_cast<double>(removed_docs) / static_cast<double>(total_docs);
}

json DecontReport::to_json() const {
  json s = json::array();
  for (const auto& h : samples) s.push_back({{"doc_id", h.doc_id}, {"gram", h.gram}, {"benchmark", h.benchmark}});
  return {{"total_docs", total_docs},
          {"removed_docs", removed_docs},
          {"kept_docs", total_docs - removed_docs},
          {"contamination_rate", contamination_rate()},
          {"benchmark_hits", benchmark_hits},
          {"samples", s}};
}

std::optional<ContaminationHit> find_contamination(const NgramIndex& index, std::string_view text) {
  if (index.tag() != kNormalizationTag)
    throw DataError("index normalisation tag '" + index.tag() + "' does not match '" + std::string(kNormalizationTag) +
                    "'");
  const auto tokens = normalize_for_ngrams(text);
  const auto fps = window_fingerprints(tokens, index.n());
  for (std::size_t i = 0; i < fps.size(); ++i) {
    if (index.contains(fps[i]))
      return ContaminationHit{{}, join_spaces(tokens, i, static_cast<std::size_t>(index.n())), index.origin(fps[i])};
  }
  return std::nullopt;
}

namespace {

void check_index(const NgramIndex& index) {
  if (index.empty()) throw DataError("decontamination index is empty");
  if (index.tag() != kNormalizationTag)
    throw DataError("index normalisation tag '" + index.tag() + "' does not match '" + std::string(kNormalizationTag) +
                    "'");
}

void record_hit(DecontReport& rep, ContaminationHit hit, std::size_t max_samples) {
  ++rep.removed_docs;
  ++rep.benchmark_hits[hit.benchmark];
  if (rep.samples.size() < max_samples) rep.samples.push_back(std::move(hit));
}

}  // namespace

std::vector<Document> decontaminate(const std::vector<Document>& docs, const NgramIndex& index, DecontReport* report,
                                    std::size_t max_samples) {
  check_index(index);
  DecontReport rep;
  std::vector<Document> clean;
  for (const auto& d : docs) {
    ++rep.total_docs;
    if (auto hit = find_contamination(index, d.text)) {
      hit->doc_id = d.id;
      record_hit(rep, std::move(*hit), max_samples);
    } else {
      clean.push_back(d);
    }
  }
  if (report) *report = std::move(rep);
  return clean;
}

DecontReport decontaminate_file(const std::filesystem::path& docs, const NgramIndex& index,
                                const std::filesystem::path& out, std::size_t jobs, std::size_t max_samples) {
  check_index(index);
  DecontReport rep;
  DocumentReader reader(docs);
  DocumentWriter writer(out);
  constexpr std::size_t kBatch = 4096;
  std::vector<Document> batch;
  std::vector<std::optional<ContaminationHit>> hits;
  auto flush = [&] {
    hits.assign(batch.size(), std::nullopt);
    parallel_for(batch.size(), jobs, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) hits[i] = find_contamination(index, batch[i].text);
    });
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ++rep.total_docs;
      if (hits[i]) {
        hits[i]->doc_id = batch[i].id;
        record_hit(rep, std::move(*hits[i]), max_samples);
      } else {
        writer.write(batch[i]);
      }
    }
    batch.clear();
  };
  Document d;
  while (reader.next(d)) {
    batch.push_back(std::move(d));
    if (batch.size() == kBatch) flush();
  }
  flush();
  writer.finish();
  return rep;
}

}  // namespace qf

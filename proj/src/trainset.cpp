#include "qf/trainset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "qf/corpus.hpp"
#include "qf/error.hpp"
#include "qf/rng.hpp"
#include "qf/unicode.hpp"

namespace qf {

using nlohmann::json;

namespace {

constexpr std::string_view kUnkToken = "<unk>";
constexpr std::string_view kReplacementUtf8 = "\xEF\xBF\xBD";
constexpr std::uint64_t kNegativeStream = 0x6e6567617469766fULL;
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;

std::string record_id(const json& raw, const std::string& id_field, std::uint64_t line_no) {
  auto it = raw.find(id_field);
  if (it != raw.end()) {
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
  }
  return "L" + std::to_string(line_no);
}

}  // namespace

const char* label_name(Label l) { return l == Label::positive ? "positive" : "negative"; }

Label parse_label(const std::string& s) {
  if (s == "positive" || s == "1") return Label::positive;
  if (s == "negative" || s == "0") return Label::negative;
  throw DataError("unknown label '" + s + "'");
}

const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::no_text_fields: return "no_text_fields";
    case RejectReason::contains_unk: return "contains_unk";
    case RejectReason::invalid_utf8: return "invalid_utf8";
  }
  return "unknown";
}

std::variant<LabeledSample, Rejection> preprocess_positive(const json& raw, const std::vector<std::string>& fields,
                                                           const std::string& source, const std::string& id) {
  std::vector<std::string> parts;
  for (const auto& f : fields) {
    auto it = raw.find(f);
    if (it == raw.end()) continue;
    if (it->is_string()) {
      if (!it->get_ref<const std::string&>().empty()) parts.push_back(it->get<std::string>());
    } else if (it->is_array()) {
      for (const auto& m : *it)
        if (m.is_string() && !m.get_ref<const std::string&>().empty()) parts.push_back(m.get<std::string>());
    }
  }
  std::string text;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) text += '\n';
    text += parts[i];
  }
  if (ws_token_count(text) == 0) return Rejection{RejectReason::no_text_fields};
  if (!unicode::is_valid_utf8(text) || text.find(kReplacementUtf8) != std::string::npos)
    return Rejection{RejectReason::invalid_utf8};
  if (text.find(kUnkToken) != std::string::npos) return Rejection{RejectReason::contains_unk};
  return LabeledSample{id, std::move(text), Label::positive, source};
}

std::uint64_t SourceStats::rejected_total() const {
  std::uint64_t n = 0;
  for (const auto& [_, c] : rejected) n += c;
  return n;
}

double SourceStats::rejection_rate() const {
  return records == 0 ? 0.0 : static_cast<double>(rejected_total()) / static_cast<double>(records);
}

json TrainsetReport::to_json() const {
  json src = json::object();
  for (const auto& [name, s] : sources) {
    src[name] = {{"records", s.records},
                 {"accepted", s.accepted},
                 {"rejected", s.rejected},
                 {"rejected_total", s.rejected_total()},
                 {"rejection_rate", s.rejection_rate()},
                 {"sampled", s.sampled}};
  }
  return {{"lang", lang},
          {"seed", seed},
          {"cap_per_class", cap_per_class},
          {"sources", src},
          {"positive_candidates", positive_candidates},
          {"positives", positives},
          {"negative_candidates", negative_candidates},
          {"negatives", negatives},
          {"train_count", train_count},
          {"heldout_count", heldout_count},
          {"warnings", warnings}};
}

namespace {

Document to_document(const LabeledSample& s, const std::string& lang) {
  Document d;
  d.id = s.id;
  d.lang = lang;
  d.text = s.text;
  d.meta["label"] = label_name(s.label);
  d.meta["source"] = s.source;
  return d;
}

}  // namespace

TrainsetReport build_trainset(const TrainsetSpec& spec, const TrainsetOutputs& out) {
  if (spec.cap_per_class == 0) throw ConfigError("cap_per_class must be > 0");
  if (spec.positive_sources.empty()) throw ConfigError("at least one positive source is required");
  if (spec.lang.empty()) throw ConfigError("trainset language is required");
  if (!(spec.heldout_fraction >= 0.0 && spec.heldout_fraction < 1.0))
    throw ConfigError("heldout_fraction must be in [0, 1)");

  TrainsetReport report;
  report.lang = spec.lang;
  report.seed = spec.seed;
  report.cap_per_class = spec.cap_per_class;

  // Positives: pre-process every record, then sample uniformly from the pooled survivors.
  std::vector<LabeledSample> pool;
  std::unordered_set<std::string> ids;
  for (const auto& src : spec.positive_sources) {
    if (report.sources.count(src.name)) throw ConfigError("duplicate positive source name '" + src.name + "'");
    SourceStats& stats = report.sources[src.name];
    std::ifstream in(src.path, std::ios::binary);
    if (!in) throw IoError("cannot open positive source " + src.path.string());
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      json raw;
      try {
        raw = json::parse(line);
      } catch (const json::parse_error& e) {
        throw DataError(src.path.string() + ": line " + std::to_string(line_no) + ": malformed record: " + e.what());
      }
      if (!raw.is_object())
        throw DataError(src.path.string() + ": line " + std::to_string(line_no) + ": record is not an object");
      ++stats.records;
      const std::string id = src.name + "/" + record_id(raw, src.id_field, line_no);
      auto result = preprocess_positive(raw, src.fields, src.name, id);
      if (auto* rej = std::get_if<Rejection>(&result)) {
        ++stats.rejected[reject_reason_name(rej->reason)];
        continue;
      }
      if (!ids.insert(id).second) throw DataError(src.path.string() + ": duplicate sample id '" + id + "'");
      ++stats.accepted;
      pool.push_back(std::get<LabeledSample>(std::move(result)));
    }
  }
  report.positive_candidates = pool.size();
  if (pool.empty()) throw DataError("no positive samples survived pre-processing");

  Rng pos_rng(spec.seed);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  pos_rng.shuffle(std::span(order));
  order.resize(std::min<std::size_t>(order.size(), spec.cap_per_class));
  std::vector<LabeledSample> positives;
  positives.reserve(order.size());
  for (std::size_t i : order) {
    ++report.sources[pool[i].source].sampled;
    positives.push_back(std::move(pool[i]));
  }
  pool.clear();
  report.positives = positives.size();

  // Negatives: reservoir sample over the raw corpus stream.
  Rng neg_rng(spec.seed ^ kNegativeStream);
  std::vector<LabeledSample> negatives;
  std::uint64_t seen = 0;
  std::uint64_t skipped_empty = 0;
  {
    DocumentReader reader(spec.negative_corpus);
    Document d;
    while (reader.next(d)) {
      if (ws_token_count(d.text) == 0) {
        ++skipped_empty;
        continue;
      }
      LabeledSample s{"neg/" + d.id, std::move(d.text), Label::negative, "negative_corpus"};
      if (seen < spec.cap_per_class) {
        negatives.push_back(std::move(s));
      } else {
        const std::uint64_t j = neg_rng.index(seen + 1);
        if (j < spec.cap_per_class) negatives[j] = std::move(s);
      }
      ++seen;
    }
  }
  report.negative_candidates = seen;
  report.negatives = negatives.size();
  if (skipped_empty > 0)
    report.warnings.push_back("skipped " + std::to_string(skipped_empty) + " empty-text negative documents");
  if (negatives.size() < spec.cap_per_class)
    report.warnings.push_back("negative corpus has " + std::to_string(negatives.size()) +
                              " usable documents, fewer than cap " + std::to_string(spec.cap_per_class) +
                              "; using all");
  if (negatives.empty()) report.warnings.push_back("no negative samples; trainset is single-label");

  // Held-out split per class, after sampling.
  Rng split_rng(spec.seed ^ kSplitStream);
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> heldout;
  for (auto* cls : {&positives, &negatives}) {
    split_rng.shuffle(std::span(*cls));
    const auto n_hold = static_cast<std::size_t>(static_cast<double>(cls->size()) * spec.heldout_fraction);
    for (std::size_t i = 0; i < cls->size(); ++i) ((i < n_hold) ? heldout : train).push_back(std::move((*cls)[i]));
  }
  split_rng.shuffle(std::span(train));
  split_rng.shuffle(std::span(heldout));
  report.train_count = train.size();
  report.heldout_count = heldout.size();

  {
    DocumentWriter w(out.train);
    for (const auto& s : train) w.write(to_document(s, spec.lang));
    w.finish();
  }
  {
    DocumentWriter w(out.heldout);
    for (const auto& s : heldout) w.write(to_document(s, spec.lang));
    w.finish();
  }
  if (!out.report.empty()) {
    std::ofstream r(out.report, std::ios::binary | std::ios::trunc);
    if (!r) throw IoError("cannot open " + out.report.string() + " for writing");
    r << report.to_json().dump(2) << '\n';
  }
  return report;
}

std::vector<LabeledSample> read_labeled_samples(const std::filesystem::path& path) {
  std::vector<LabeledSample> out;
  DocumentReader reader(path);
  Document d;
  while (reader.next(d)) {
    auto it = d.meta.find("label");
    if (it == d.meta.end()) throw DataError(path.string() + ": document '" + d.id + "' has no label");
    LabeledSample s;
    s.label = parse_label(it->second);
    s.id = std::move(d.id);
    s.text = std::move(d.text);
    if (auto src = d.meta.find("source"); src != d.meta.end()) s.source = src->second;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace qf

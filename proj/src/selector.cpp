#include "qf/selector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "qf/error.hpp"
#include "qf/rng.hpp"

namespace qf {

using nlohmann::json;

namespace {

struct Ranked {
  double score;
  std::string_view id;
};

// Higher score first, then smaller id.
bool ranks_before(double sa, std::string_view ia, double sb, std::string_view ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

void check_retention(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("retention fraction must be in (0, 1]");
}

// Order-preserving map of a double onto uint64 (ascending). -0.0 folds onto +0.0.
std::uint64_t ordered_key(double v) {
  if (v == 0.0) v = 0.0;
  const auto bits = std::bit_cast<std::uint64_t>(v);
  return (bits & 0x8000000000000000ULL) ? ~bits : bits | 0x8000000000000000ULL;
}

constexpr int kHistogramBits = 20;

}  // namespace

std::uint64_t retained_count(double p, std::uint64_t n) {
  check_retention(p);
  const double x = p * static_cast<double>(n);
  const double r = std::round(x);
  std::uint64_t k = std::abs(x - r) <= 1e-9 * std::max(1.0, x) ? static_cast<std::uint64_t>(r)
                                                                  : static_cast<std::uint64_t>(std::ceil(x));
  return std::clamp<std::uint64_t>(k, n == 0 ? 0 : 1, n);
}

json SelectionPlan::to_json() const {
  return {{"retention", retention},       {"total", total},
          {"retained_count", retained.size()}, {"threshold", threshold},
          {"tie_policy", tie_policy},     {"scorer", scorer},
          {"score_config_hash", score_config_hash}, {"config_hash", config_hash},
          {"retained", retained}};
}

SelectionPlan SelectionPlan::from_json(const json& j) {
  SelectionPlan p;
  p.retention = j.at("retention").get<double>();
  p.total = j.at("total").get<std::uint64_t>();
  p.threshold = j.at("threshold").get<double>();
  p.retained = j.at("retained").get<std::vector<std::string>>();
  p.tie_policy = j.value("tie_policy", std::string(kTiePolicy));
  p.scorer = j.value("scorer", "");
  p.score_config_hash = j.value("score_config_hash", "");
  p.config_hash = j.value("config_hash", "");
  return p;
}

void SelectionPlan::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json().dump(2) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

SelectionPlan SelectionPlan::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid plan: " + e.what());
  }
}

SelectionPlan plan_selection(const ScoreTable& scores, double p) {
  check_retention(p);
  if (scores.entries.empty()) throw DataError("cannot plan a selection over an empty score table");
  scores.validate();
  const std::uint64_t n = scores.entries.size();
  const std::uint64_t k = retained_count(p, n);

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const auto& ea = scores.entries[a];
    const auto& eb = scores.entries[b];
    return ranks_before(ea.score, ea.doc_id, eb.score, eb.doc_id);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);

  SelectionPlan plan;
  plan.retention = p;
  plan.total = n;
  plan.scorer = scores.scorer;
  plan.score_config_hash = scores.config_hash;
  plan.retained.reserve(k);
  for (std::uint64_t i = 0; i < k; ++i) plan.retained.push_back(scores.entries[order[i]].doc_id);
  plan.threshold = scores.entries[order[k - 1]].score;
  return plan;
}

SelectionPlan plan_selection_two_pass(const ScoreSource& source, double p) {
  check_retention(p);
  constexpr std::size_t kBins = std::size_t{1} << kHistogramBits;
  std::vector<std::uint64_t> hist(kBins, 0);
  std::uint64_t n = 0;
  source([&](std::string_view, double score) {
    if (!std::isfinite(score)) throw DataError("non-finite score in score stream");
    ++hist[ordered_key(score) >> (64 - kHistogramBits)];
    ++n;
  });
  if (n == 0) throw DataError("cannot plan a selection over an empty score table");
  const std::uint64_t k = retained_count(p, n);

  // Walk bins from the highest key down to find the one holding rank k.
  std::size_t boundary = kBins;
  std::uint64_t above = 0;
  for (std::size_t b = kBins; b-- > 0;) {
    if (above + hist[b] >= k) {
      boundary = b;
      break;
    }
    above += hist[b];
  }
  hist.clear();
  hist.shrink_to_fit();

  struct Entry {
    double score;
    std::string id;
  };
  std::vector<Entry> sure;
  std::vector<Entry> edge;
  sure.reserve(above);
  source([&](std::string_view id, double score) {
    const std::size_t b = ordered_key(score) >> (64 - kHistogramBits);
    if (b > boundary) {
      sure.push_back({score, std::string(id)});
    } else if (b == boundary) {
      edge.push_back({score, std::string(id)});
    }
  });
  auto before = [](const Entry& a, const Entry& b) { return ranks_before(a.score, a.id, b.score, b.id); };
  std::sort(sure.begin(), sure.end(), before);
  const std::uint64_t need = k - sure.size();
  std::partial_sort(edge.begin(), edge.begin() + static_cast<std::ptrdiff_t>(need), edge.end(), before);

  SelectionPlan plan;
  plan.retention = p;
  plan.total = n;
  plan.retained.reserve(k);
  for (auto& e : sure) plan.retained.push_back(std::move(e.id));
  for (std::uint64_t i = 0; i < need; ++i) plan.retained.push_back(std::move(edge[i].id));
  plan.threshold = need > 0 ? edge[need - 1].score : sure.back().score;
  return plan;
}

SelectionPlan plan_selection_two_pass(const std::filesystem::path& score_tsv, double p) {
  std::string scorer;
  std::string config;
  ScoreSource source = [&](const std::function<void(std::string_view, double)>& sink) {
    std::ifstream in(score_tsv, std::ios::binary);
    if (!in) throw IoError("cannot open " + score_tsv.string());
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line[0] == '#') {
        if (auto s = line.find("scorer="); s != std::string::npos) scorer = line.substr(s + 7, line.find('\t', s) - s - 7);
        if (auto c = line.find("config="); c != std::string::npos) config = line.substr(c + 7);
        continue;
      }
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw DataError(score_tsv.string() + ": line " + std::to_string(line_no) + ": expected 'doc_id<TAB>score'");
      char* end = nullptr;
      const double v = std::strtod(line.c_str() + tab + 1, &end);
      if (end == line.c_str() + tab + 1)
        throw DataError(score_tsv.string() + ": line " + std::to_string(line_no) + ": bad score value");
      sink(std::string_view(line).substr(0, tab), v);
    }
  };
  SelectionPlan plan = plan_selection_two_pass(source, p);
  plan.scorer = scorer;
  plan.score_config_hash = config;
  return plan;
}

BudgetRetention retention_for_budget(const CorpusManifest& manifest, double target_tokens, double min_fraction) {
  if (!(target_tokens > 0.0)) throw ConfigError("token budget must be > 0");
  if (manifest.total_ws_tokens == 0) throw DataError("corpus has no tokens; cannot derive a retention fraction");
  if (!(min_fraction >= 0.0 && min_fraction <= 1.0)) throw ConfigError("min_fraction must be in [0, 1]");
  BudgetRetention r;
  r.raw = std::min(1.0, target_tokens / static_cast<double>(manifest.total_ws_tokens));
  r.floored = min_fraction > r.raw;
  r.fraction = std::max(min_fraction, r.raw);
  r.percent = static_cast<int>(std::lround(r.fraction * 100.0));
  return r;
}

double FilterStats::doc_fraction() const {
  return input_docs == 0 ? 0.0 : static_cast<double>(retained_docs) / static_cast<double>(input_docs);
}

double FilterStats::token_fraction() const {
  return input_tokens == 0 ? 0.0 : static_cast<double>(retained_tokens) / static_cast<double>(input_tokens);
}

json FilterStats::to_json() const {
  return {{"input_docs", input_docs},           {"input_tokens", input_tokens},
          {"retained_docs", retained_docs},     {"retained_tokens", retained_tokens},
          {"retained_doc_fraction", doc_fraction()}, {"retained_token_fraction", token_fraction()},
          {"token_unit", "whitespace"}};
}

namespace {

void check_all_found(const SelectionPlan& plan, const std::unordered_set<std::string_view>& found) {
  for (const auto& id : plan.retained)
    if (!found.count(id)) throw DataError("retained id '" + id + "' is not in the corpus");
}

}  // namespace

FilterStats filter_corpus(const std::filesystem::path& docs, const SelectionPlan& plan,
                          const std::filesystem::path& out) {
  std::unordered_set<std::string_view> keep(plan.retained.begin(), plan.retained.end());
  std::unordered_set<std::string_view> found;
  FilterStats stats;
  DocumentReader reader(docs);
  DocumentWriter writer(out);
  Document d;
  while (reader.next(d)) {
    const auto tokens = ws_token_count(d.text);
    ++stats.input_docs;
    stats.input_tokens += tokens;
    auto it = keep.find(d.id);
    if (it == keep.end()) continue;
    found.insert(*it);
    ++stats.retained_docs;
    stats.retained_tokens += tokens;
    writer.write(d);
  }
  writer.finish();
  check_all_found(plan, found);
  return stats;
}

std::vector<Document> filter_documents(const std::vector<Document>& docs, const SelectionPlan& plan,
                                       FilterStats* stats) {
  std::unordered_set<std::string_view> keep(plan.retained.begin(), plan.retained.end());
  std::unordered_set<std::string_view> found;
  FilterStats s;
  std::vector<Document> out;
  for (const auto& d : docs) {
    const auto tokens = ws_token_count(d.text);
    ++s.input_docs;
    s.input_tokens += tokens;
    auto it = keep.find(d.id);
    if (it == keep.end()) continue;
    found.insert(*it);
    ++s.retained_docs;
    s.retained_tokens += tokens;
    out.push_back(d);
  }
  check_all_found(plan, found);
  if (stats) *stats = s;
  return out;
}

json ReplayStats::to_json() const {
  return {{"output_docs", output_docs},
          {"raw_docs", raw_docs},
          {"filtered_docs", filtered_docs},
          {"filtered_dropped", filtered_dropped},
          {"reidentified", reidentified},
          {"rate", rate},
          {"raw_fraction", output_docs == 0 ? 0.0 : static_cast<double>(raw_docs) / static_cast<double>(output_docs)},
          {"proportion_unit", "documents"}};
}

namespace {

struct MixPlan {
  std::uint64_t total = 0;     // M
  std::uint64_t from_raw = 0;  // round(r * M)
  std::vector<std::uint64_t> raw_picks;  // raw indices in draw order
};

MixPlan plan_mix(std::uint64_t n_filtered, std::uint64_t n_raw, double r, Rng& rng) {
  if (!(r >= 0.0 && r < 1.0)) throw ConfigError("replay rate must be in [0, 1)");
  MixPlan plan;
  if (r == 0.0) {
    plan.total = n_filtered;
    return plan;
  }
  if (n_raw == 0) throw DataError("replay rate > 0 but the raw corpus is empty");
  std::uint64_t m = static_cast<std::uint64_t>(std::floor(static_cast<double>(n_filtered) / (1.0 - r))) + 2;
  for (;; --m) {
    const auto from_raw = static_cast<std::uint64_t>(std::llround(r * static_cast<double>(m)));
    if (m - from_raw <= n_filtered && from_raw <= n_raw) {
      plan.total = m;
      plan.from_raw = from_raw;
      break;
    }
    if (m == 0) break;
  }
  std::vector<std::uint64_t> idx(n_raw);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(std::span(idx));
  idx.resize(plan.from_raw);
  plan.raw_picks = std::move(idx);
  return plan;
}

std::vector<Document> assemble(const std::vector<Document>& filtered, std::vector<Document> picked,
                               const MixPlan& plan, Rng& rng, ReplayStats& stats) {
  const std::uint64_t keep = plan.total - plan.from_raw;
  std::unordered_set<std::string_view> ids;
  for (std::uint64_t i = 0; i < keep; ++i) ids.insert(filtered[i].id);
  std::vector<Document> out;
  out.reserve(plan.total);
  for (std::uint64_t i = 0; i < keep; ++i) out.push_back(filtered[i]);
  for (auto& d : picked) {
    d.meta["replay"] = "1";
    if (ids.count(d.id)) {
      d.id = "replay/" + d.id;
      ++stats.reidentified;
      if (ids.count(d.id)) throw DataError("cannot re-identify replay document '" + d.id + "'");
    }
    out.push_back(std::move(d));
  }
  rng.shuffle(std::span(out));
  stats.output_docs = out.size();
  stats.raw_docs = plan.from_raw;
  stats.filtered_docs = keep;
  stats.filtered_dropped = filtered.size() - keep;
  return out;
}

}  // namespace

std::vector<Document> mix_replay(const std::vector<Document>& filtered, const std::vector<Document>& raw, double r,
                                 std::uint64_t seed, ReplayStats* stats) {
  Rng rng(seed);
  ReplayStats s;
  s.rate = r;
  const MixPlan plan = plan_mix(filtered.size(), raw.size(), r, rng);
  if (r == 0.0) {
    s.output_docs = s.filtered_docs = filtered.size();
    if (stats) *stats = s;
    return filtered;
  }
  std::vector<Document> picked;
  picked.reserve(plan.raw_picks.size());
  for (auto i : plan.raw_picks) picked.push_back(raw[i]);
  auto out = assemble(filtered, std::move(picked), plan, rng, s);
  if (stats) *stats = s;
  return out;
}

ReplayStats mix_replay_files(const std::filesystem::path& filtered_path, const std::filesystem::path& raw_path,
                             double r, std::uint64_t seed, const std::filesystem::path& out_path) {
  const auto filtered = read_documents(filtered_path);
  std::uint64_t n_raw = 0;
  {
    DocumentReader reader(raw_path);
    Document d;
    while (reader.next(d)) ++n_raw;
  }
  Rng rng(seed);
  ReplayStats s;
  s.rate = r;
  const MixPlan plan = plan_mix(filtered.size(), n_raw, r, rng);
  std::vector<Document> out;
  if (r == 0.0) {
    out = filtered;
    s.output_docs = s.filtered_docs = filtered.size();
  } else {
    std::unordered_map<std::uint64_t, std::size_t> slot;
    for (std::size_t i = 0; i < plan.raw_picks.size(); ++i) slot.emplace(plan.raw_picks[i], i);
    std::vector<Document> picked(plan.raw_picks.size());
    DocumentReader reader(raw_path);
    Document d;
    for (std::uint64_t i = 0; reader.next(d); ++i)
      if (auto it = slot.find(i); it != slot.end()) picked[it->second] = std::move(d);
    out = assemble(filtered, std::move(picked), plan, rng, s);
  }
  write_documents(out, out_path);
  return s;
}

}  // namespace qf

#include "qf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "qf/analytics.hpp"
#include "qf/corpus.hpp"
#include "qf/cosine.hpp"
#include "qf/decontam.hpp"
#include "qf/embedding_store.hpp"
#include "qf/hash.hpp"
#include "qf/mlp.hpp"
#include "qf/ngram.hpp"
#include "qf/scores.hpp"
#include "qf/selector.hpp"
#include "qf/trainset.hpp"

namespace qf {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool is_non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

constexpr std::string_view kStageRecord = "stage.json";
constexpr std::string_view kRunManifest = "run_manifest.json";

struct OutputSpec {
  std::string name;
  std::string file;
};

struct StageType {
  std::string name;
  std::vector<std::string> required;
  std::vector<std::string> optional;
  std::vector<OutputSpec> outputs;  // first is the default
};

const std::vector<StageType>& stage_types() {
  static const std::vector<StageType> types = {
      {"build-trainset",
       {"positives", "negatives"},
       {"cap_per_class", "heldout_fraction"},
       {{"train", "train.jsonl"}, {"heldout", "heldout.jsonl"}, {"report", "report.json"}}},
      {"embed-handoff", {"corpora"}, {"embeddings_dir", "model", "dim"}, {{"requests", "embed_requests.json"}}},
      {"train-ngram",
       {"train"},
       {"heldout", "preset", "mode", "ngram_order", "min_count", "lowercase", "epochs", "lr", "dim", "buckets"},
       {{"model", "model.ngqf"}, {"report", "report.json"}}},
      {"train-mlp",
       {"train", "heldout", "embeddings"},
       {"hidden", "epochs", "lr", "dropout", "batch_size", "weight_decay"},
       {{"model", "model.mlpq"}, {"report", "report.json"}}},
      {"build-refs", {"train", "embeddings"}, {"k"}, {{"refs", "refs.embx"}, {"report", "report.json"}}},
      {"score",
       {"scorer", "corpus"},
       {"model", "refs", "embeddings"},
       {{"scores", "scores.tsv"}, {"report", "report.json"}}},
      {"plan",
       {"scores"},
       {"corpus", "retention", "token_budget", "min_retention"},
       {{"plan", "plan.json"}, {"report", "report.json"}}},
      {"filter", {"plan", "corpus"}, {}, {{"corpus", "filtered.jsonl"}, {"report", "report.json"}}},
      {"mix", {"filtered", "raw", "rate"}, {}, {{"corpus", "mixed.jsonl"}, {"report", "report.json"}}},
      {"decontaminate",
       {"corpus", "benchmarks"},
       {"n", "max_samples"},
       {{"corpus", "clean.jsonl"}, {"index", "index.ngix"}, {"report", "report.json"}}},
      {"stats", {"baseline", "runs"}, {"metrics", "lower_is_better"}, {{"report", "report.json"}, {"csv", "lengths.csv"}}},
  };
  return types;
}

const StageType* find_type(const std::string& name) {
  for (const auto& t : stage_types())
    if (t.name == name) return &t;
  return nullptr;
}

bool valid_id(const std::string& id) {
  if (id.empty()) return false;
  return std::all_of(id.begin(), id.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; });
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + ": malformed JSON");
  return j;
}

fs::path resolve_path(const std::string& raw, const fs::path& base) {
  fs::path p = interpolate_env(raw);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

// Every "@stage[.output]" or "$input" string anywhere inside `j`.
void collect_refs(const json& j, std::vector<std::string>& out) {
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (!s.empty() && (s[0] == '@' || s[0] == '$')) out.push_back(s);
  } else if (j.is_array() || j.is_object()) {
    for (const auto& v : j) collect_refs(v, out);
  }
}

// Resolved view of one stage's parameters.
class Ctx {
 public:
  Ctx(const PipelineConfig& cfg, const StageConfig& st, std::size_t jobs, bool check_only)
      : cfg_(cfg), st_(st), jobs_(jobs), check_only_(check_only) {}

  const PipelineConfig& cfg() const { return cfg_; }
  const StageConfig& stage() const { return st_; }
  std::size_t jobs() const { return jobs_; }
  bool check_only() const { return check_only_; }
  const std::set<fs::path>& used() const { return used_; }

  const fs::path& out(const std::string& name) const { return st_.outputs.at(name); }

  bool has(const std::string& key) const { return st_.params.contains(key) && !st_.params.at(key).is_null(); }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError("stage '" + st_.id + "': '" + key + "' " + msg);
  }

  fs::path resolve(const std::string& key, const json& v) {
    if (!v.is_string()) fail(key, "must be a reference string");
    const auto& s = v.get_ref<const std::string&>();
    fs::path p;
    if (!s.empty() && s[0] == '$') {
      auto it = cfg_.inputs.find(s.substr(1));
      if (it == cfg_.inputs.end()) fail(key, "refers to undeclared input '" + s + "'");
      p = it->second;
    } else if (!s.empty() && s[0] == '@') {
      const auto dot = s.find('.');
      const std::string id = s.substr(1, dot == std::string::npos ? std::string::npos : dot - 1);
      const auto* up = find_stage(id);
      if (!up) fail(key, "refers to unknown stage '" + id + "'");
      std::string name;
      if (dot == std::string::npos) {
        const auto* t = find_type(up->type);
        name = t->outputs.front().name;
        if (up->type == "embed-handoff") fail(key, "must name an embed-handoff output, e.g. '@" + id + ".<corpus>'");
      } else {
        name = s.substr(dot + 1);
      }
      auto it = up->outputs.find(name);
      if (it == up->outputs.end()) fail(key, "refers to unknown output '" + name + "' of stage '" + id + "'");
      p = it->second;
    } else {
      fail(key, "must reference a declared input ($name) or a stage output (@stage), got '" + s + "'");
    }
    used_.insert(p);
    return p;
  }

  fs::path ref(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    return resolve(key, st_.params.at(key));
  }
  std::optional<fs::path> opt_ref(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return ref(key);
  }
  std::vector<fs::path> ref_list(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    const auto& v = st_.params.at(key);
    if (v.is_string()) return {resolve(key, v)};
    if (!v.is_array() || v.empty()) fail(key, "must be a non-empty list of references");
    std::vector<fs::path> out;
    for (const auto& e : v) out.push_back(resolve(key, e));
    return out;
  }
  std::vector<std::pair<std::string, fs::path>> ref_map(const std::string& key) {
    if (!has(key)) fail(key, "is required");
    const auto& v = st_.params.at(key);
    if (!v.is_object() || v.empty()) fail(key, "must be a non-empty object of name -> reference");
    std::vector<std::pair<std::string, fs::path>> out;
    for (const auto& [name, r] : v.items()) out.emplace_back(name, resolve(key, r));
    return out;
  }

  double num(const std::string& key, std::optional<double> def = std::nullopt) const {
    if (!has(key)) {
      if (!def) fail(key, "is required");
      return *def;
    }
    const auto& v = st_.params.at(key);
    if (!v.is_number()) fail(key, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }
  std::uint64_t u64(const std::string& key, std::uint64_t def) const {
    if (!has(key)) return def;
    const auto& v = st_.params.at(key);
    if (!is_non_negative_integer(v)) fail(key, "must be a non-negative integer");
    return v.get<std::uint64_t>();
  }
  int int_param(const std::string& key, int def) const {
    const auto v = u64(key, static_cast<std::uint64_t>(def));
    if (v > 1'000'000'000ULL) fail(key, "is out of range");
    return static_cast<int>(v);
  }
  std::string str(const std::string& key, const std::string& def = {}) const {
    if (!has(key)) return def;
    const auto& v = st_.params.at(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }
  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const auto& v = st_.params.at(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }
  const json& raw(const std::string& key) const { return st_.params.at(key); }

  json& report() { return report_; }

 private:
  const StageConfig* find_stage(const std::string& id) const {
    for (const auto& s : cfg_.stages)
      if (s.id == id) return &s;
    return nullptr;
  }

  const PipelineConfig& cfg_;
  const StageConfig& st_;
  std::size_t jobs_;
  bool check_only_;
  std::set<fs::path> used_;
  json report_ = json::object();
};

void finish_report(Ctx& c, json body) {
  body["stage"] = c.stage().id;
  body["config_hash"] = c.cfg().config_hash;
  write_json(c.out("report"), body);
}

std::vector<std::string> string_list(Ctx& c, const json& v, const std::string& key) {
  if (!v.is_array() || v.empty()) c.fail(key, "must be a non-empty list of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) c.fail(key, "must be a non-empty list of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::vector<std::string> corpus_ids(const fs::path& path) {
  std::vector<std::string> ids;
  DocumentReader reader(path);
  Document d;
  while (reader.next(d)) ids.push_back(std::move(d.id));
  return ids;
}

EmbeddingMatrix load_embeddings(const std::vector<fs::path>& paths) {
  EmbeddingMatrix all;
  bool first = true;
  for (const auto& p : paths) {
    EmbeddingMatrix m = read_embeddings(p);
    if (first) {
      all.dim = m.dim;
      all.extension = m.extension;
      first = false;
    } else {
      if (m.dim != all.dim)
        throw EmbxError(EmbxError::Kind::dim_mismatch, p.string() + ": dimension " + std::to_string(m.dim) +
                                                           " differs from " + std::to_string(all.dim));
      if (m.model_tag() != all.model_tag())
        throw EmbxError(EmbxError::Kind::model_mismatch, p.string() + ": encoder '" + m.model_tag() +
                                                             "' differs from '" + all.model_tag() + "'");
    }
    all.ids.insert(all.ids.end(), m.ids.begin(), m.ids.end());
    all.values.insert(all.values.end(), m.values.begin(), m.values.end());
  }
  std::set<std::string_view> seen;
  for (const auto& id : all.ids)
    if (!seen.insert(id).second) throw EmbxError(EmbxError::Kind::duplicate_id, "duplicate embedding id '" + id + "'");
  return all;
}

// Rows of `m` rearranged into `ids` order.
EmbeddingMatrix reorder(const EmbeddingMatrix& m, const std::vector<std::string>& ids) {
  const auto rows = lookup_rows(m, ids);
  EmbeddingMatrix out;
  out.dim = m.dim;
  out.extension = m.extension;
  out.ids = ids;
  out.values.reserve(ids.size() * m.dim);
  for (auto r : rows) {
    const auto row = m.row(r);
    out.values.insert(out.values.end(), row.begin(), row.end());
  }
  return out;
}

// ---- stage executors ----

void run_build_trainset(Ctx& c) {
  TrainsetSpec spec;
  spec.lang = c.cfg().language;
  spec.seed = c.cfg().seed;
  spec.cap_per_class = c.u64("cap_per_class", spec.cap_per_class);
  spec.heldout_fraction = c.num("heldout_fraction", spec.heldout_fraction);
  spec.negative_corpus = c.ref("negatives");
  const auto& pos = c.raw("positives");
  if (!pos.is_array() || pos.empty()) c.fail("positives", "must be a non-empty list");
  for (const auto& p : pos) {
    if (!p.is_object() || !p.contains("name") || !p.contains("path") || !p["name"].is_string())
      c.fail("positives", "entries need a string 'name' and a 'path' reference");
    PositiveSource src;
    src.name = p["name"].get<std::string>();
    src.path = c.resolve("positives", p["path"]);
    if (p.contains("fields")) src.fields = string_list(c, p["fields"], "positives.fields");
    if (p.contains("id_field")) {
      if (!p["id_field"].is_string()) c.fail("positives.id_field", "must be a string");
      src.id_field = p["id_field"].get<std::string>();
    }
    spec.positive_sources.push_back(std::move(src));
  }
  if (c.check_only()) return;
  const auto report = build_trainset(spec, {c.out("train"), c.out("heldout"), c.out("report")});
  finish_report(c, report.to_json());
}

void run_embed_handoff(Ctx& c) {
  const auto corpora = c.ref_map("corpora");
  const auto expected_model = c.str("model");
  const auto dim = c.u64("dim", kDefaultEmbeddingDim);
  if (dim == 0) c.fail("dim", "must be > 0");
  if (c.check_only()) return;

  json shards = json::array();
  std::vector<std::string> missing;
  for (const auto& [name, docs] : corpora) {
    const auto& embx = c.out(name);
    shards.push_back({{"name", name},
                      {"docs", docs.string()},
                      {"embeddings", embx.string()},
                      {"present", fs::exists(embx)}});
    if (!fs::exists(embx)) missing.push_back(name);
  }
  json req{{"config_hash", c.cfg().config_hash},
           {"dim", dim},
           {"max_tokens", 512},
           {"model", expected_model},
           {"shards", shards}};
  write_json(c.out("requests"), req);
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw EmbeddingsPending("stage '" + c.stage().id + "': embeddings missing for " + names + "; produce them from " +
                            c.out("requests").string() + " and rerun");
  }

  std::string model;
  bool first = true;
  for (const auto& [name, docs] : corpora) {
    const auto& embx = c.out(name);
    EmbeddingReader r(embx);
    if (r.dim() != dim)
      throw EmbxError(EmbxError::Kind::dim_mismatch, embx.string() + ": dimension " + std::to_string(r.dim()) +
                                                         ", expected " + std::to_string(dim));
    EmbeddingMatrix header;
    header.extension = r.extension();
    const auto tag = header.model_tag();
    if (!expected_model.empty() && tag != expected_model)
      throw EmbxError(EmbxError::Kind::model_mismatch,
                      embx.string() + ": encoder '" + tag + "', expected '" + expected_model + "'");
    if (!first && tag != model)
      throw EmbxError(EmbxError::Kind::model_mismatch,
                      embx.string() + ": encoder '" + tag + "' differs from '" + model + "'");
    model = tag;
    first = false;
    const auto al = align(r.ids(), corpus_ids(docs));
    if (!al.missing.empty())
      throw DataError(embx.string() + ": missing embedding for '" + al.missing.front() + "' (" +
                      std::to_string(al.missing.size()) + " missing)");
    if (!al.orphans.empty())
      throw DataError(embx.string() + ": row '" + al.orphans.front() + "' has no document in " + docs.string());
  }
}

void run_train_ngram(Ctx& c) {
  const auto train = c.ref("train");
  const auto heldout = c.opt_ref("heldout");
  NgramPreset preset;
  try {
    preset = c.has("preset") ? ngram_preset(c.str("preset")) : ngram_preset_for_language(c.cfg().language);
  } catch (const ConfigError& e) {
    c.fail("preset", e.what());
  }
  auto& tok = preset.tokenizer;
  auto& tc = preset.train;
  if (c.has("mode")) {
    const auto m = c.str("mode");
    if (m == "whitespace") tok.mode = TokenMode::whitespace;
    else if (m == "character") tok.mode = TokenMode::character;
    else c.fail("mode", "must be 'whitespace' or 'character'");
  }
  tok.ngram_order = c.int_param("ngram_order", tok.ngram_order);
  tok.min_count = c.int_param("min_count", tok.min_count);
  tok.lowercase = c.flag("lowercase", tok.lowercase);
  tc.epochs = c.int_param("epochs", tc.epochs);
  tc.lr = c.num("lr", tc.lr);
  tc.dim = c.int_param("dim", tc.dim);
  tc.bucket_count = c.u64("buckets", tc.bucket_count);
  tc.seed = c.cfg().seed;
  try {
    tok.validate();
    tc.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("stage '" + c.stage().id + "': " + e.what());
  }
  if (c.check_only()) return;

  NgramTrainReport tr;
  const auto samples = read_labeled_samples(train);
  const auto model = train_ngram(samples, tok, tc, &tr);
  model.save(c.out("model"));
  json rep{{"samples", tr.samples},
           {"empty_feature_samples", tr.empty_feature_samples},
           {"epoch_loss", tr.epoch_loss},
           {"vocab", model.vocab_size()},
           {"buckets", model.bucket_count()},
           {"dim", model.dim()},
           {"mode", tok.mode == TokenMode::character ? "character" : "whitespace"},
           {"ngram_order", tok.ngram_order},
           {"min_count", tok.min_count},
           {"epochs", tc.epochs},
           {"lr", tc.lr}};
  if (heldout) {
    const auto ho = read_labeled_samples(*heldout);
    std::size_t correct = 0;
    for (const auto& s : ho) correct += (model.score_text(s.text) >= 0.5) == (s.label == Label::positive);
    rep["heldout_samples"] = ho.size();
    rep["heldout_accuracy"] = ho.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(ho.size());
  }
  finish_report(c, rep);
}

void run_train_mlp(Ctx& c) {
  const auto train = c.ref("train");
  const auto heldout = c.ref("heldout");
  const auto emb = c.ref_list("embeddings");
  MlpConfig cfg;
  cfg.hidden_dim = c.u64("hidden", cfg.hidden_dim);
  cfg.epochs = c.int_param("epochs", cfg.epochs);
  cfg.lr = c.num("lr", cfg.lr);
  cfg.dropout = c.num("dropout", cfg.dropout);
  cfg.batch_size = c.u64("batch_size", cfg.batch_size);
  cfg.weight_decay = c.num("weight_decay", cfg.weight_decay);
  cfg.seed = c.cfg().seed;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("stage '" + c.stage().id + "': " + e.what());
  }
  if (c.check_only()) return;

  const auto matrix = load_embeddings(emb);
  cfg.input_dim = matrix.dim;
  MlpTrainReport tr;
  const auto model = train_mlp(read_labeled_samples(train), read_labeled_samples(heldout), matrix, cfg, &tr);
  model.save(c.out("model"));
  finish_report(c, {{"encoder", matrix.model_tag()},
                    {"input_dim", cfg.input_dim},
                    {"hidden", cfg.hidden_dim},
                    {"initial_loss", tr.initial_loss},
                    {"final_loss", tr.final_loss},
                    {"epoch_loss", tr.epoch_loss},
                    {"heldout_loss", tr.heldout_loss},
                    {"heldout_accuracy", tr.heldout_accuracy},
                    {"steps", tr.steps}});
}

void run_build_refs(Ctx& c) {
  const auto train = c.ref("train");
  const auto emb = c.ref_list("embeddings");
  const auto k = c.u64("k", kDefaultReferenceCount);
  if (k == 0) c.fail("k", "must be > 0");
  if (c.check_only()) return;

  const auto matrix = load_embeddings(emb);
  std::vector<std::string> pos;
  for (const auto& s : read_labeled_samples(train))
    if (s.label == Label::positive) pos.push_back(s.id);
  const auto refs = build_reference_set(reorder(matrix, pos), k, c.cfg().seed);
  refs.save(c.out("refs"));
  finish_report(c, {{"requested_k", k}, {"size", refs.size()}, {"positives", pos.size()}, {"warnings", refs.warnings}});
}

void run_score(Ctx& c) {
  const auto scorer = c.str("scorer");
  const auto corpus = c.ref("corpus");
  std::optional<fs::path> model, refs, emb;
  if (scorer == "ngram") {
    model = c.ref("model");
    if (c.has("refs") || c.has("embeddings")) c.fail("scorer", "'ngram' takes only a model");
  } else if (scorer == "mlp") {
    model = c.ref("model");
    emb = c.ref("embeddings");
    if (c.has("refs")) c.fail("scorer", "'mlp' does not take refs");
  } else if (scorer == "cosine") {
    refs = c.ref("refs");
    emb = c.ref("embeddings");
    if (c.has("model")) c.fail("scorer", "'cosine' does not take a model");
  } else {
    c.fail("scorer", "must be one of ngram, mlp, cosine");
  }
  if (c.check_only()) return;

  ScoreTable table;
  json rep{{"scorer", scorer}};
  if (scorer == "ngram") {
    table = score_ngram_corpus(NgramModel::load(*model), corpus, c.jobs());
  } else {
    const auto docs = reorder(read_embeddings(*emb), corpus_ids(corpus));
    if (scorer == "mlp") {
      table = score_mlp(MlpModel::load(*model), docs, c.jobs());
    } else {
      const auto rs = ReferenceSet::load(*refs);
      if (rs.vectors.model_tag() != docs.model_tag())
        throw EmbxError(EmbxError::Kind::model_mismatch, "reference encoder '" + rs.vectors.model_tag() +
                                                             "' differs from document encoder '" + docs.model_tag() +
                                                             "'");
      auto cs = score_cosine(rs, docs, c.jobs());
      rep["zero_norm_docs"] = cs.zero_norm_ids.size();
      table = std::move(cs.table);
    }
  }
  table.scorer = scorer;
  table.config_hash = c.cfg().config_hash;
  write_score_table(table, c.out("scores"));
  double sum = 0.0;
  for (const auto& e : table.entries) sum += e.score;
  rep["docs"] = table.entries.size();
  rep["mean_score"] = table.entries.empty() ? 0.0 : sum / static_cast<double>(table.entries.size());
  finish_report(c, rep);
}

void run_plan(Ctx& c) {
  const auto scores = c.ref("scores");
  const auto corpus = c.opt_ref("corpus");
  const bool by_budget = c.has("token_budget");
  if (by_budget == c.has("retention")) c.fail("retention", "exactly one of 'retention' and 'token_budget' is required");
  double p = 0.0, budget = 0.0, floor = c.num("min_retention", 0.0);
  if (by_budget) {
    budget = c.num("token_budget");
    if (!(budget > 0)) c.fail("token_budget", "must be > 0");
    if (!corpus) c.fail("corpus", "is required with 'token_budget'");
  } else {
    p = c.num("retention");
    if (!(p > 0.0 && p <= 1.0)) c.fail("retention", "must be in (0, 1]");
  }
  if (!(floor >= 0.0 && floor <= 1.0)) c.fail("min_retention", "must be in [0, 1]");
  if (c.check_only()) return;

  json rep = json::object();
  if (by_budget) {
    const auto m = scan_manifest({*corpus});
    const auto br = retention_for_budget(m, budget, floor);
    p = br.fraction;
    rep["budget"] = {{"target_tokens", budget},     {"corpus_tokens", m.total_ws_tokens},
                     {"raw", br.raw},               {"fraction", br.fraction},
                     {"percent", br.percent},       {"floored", br.floored}};
  }
  const auto table = read_score_table(scores);
  if (table.config_hash != c.cfg().config_hash)
    throw DataError(scores.string() + ": produced under config " + table.config_hash + ", expected " +
                    c.cfg().config_hash);
  auto plan = plan_selection(table, p);
  plan.config_hash = c.cfg().config_hash;
  plan.save(c.out("plan"));
  rep["retention"] = p;
  rep["total"] = plan.total;
  rep["retained"] = plan.retained.size();
  rep["threshold"] = plan.threshold;
  rep["scorer"] = plan.scorer;
  finish_report(c, rep);
}

void run_filter(Ctx& c) {
  const auto plan = c.ref("plan");
  const auto corpus = c.ref("corpus");
  if (c.check_only()) return;
  const auto sp = SelectionPlan::load(plan);
  if (sp.config_hash != c.cfg().config_hash)
    throw DataError(plan.string() + ": produced under config " + sp.config_hash + ", expected " + c.cfg().config_hash);
  finish_report(c, filter_corpus(corpus, sp, c.out("corpus")).to_json());
}

void run_mix(Ctx& c) {
  const auto filtered = c.ref("filtered");
  const auto raw = c.ref("raw");
  const double rate = c.num("rate");
  if (!(rate >= 0.0 && rate < 1.0)) c.fail("rate", "must be in [0, 1)");
  if (c.check_only()) return;
  finish_report(c, mix_replay_files(filtered, raw, rate, c.cfg().seed, c.out("corpus")).to_json());
}

void run_decontaminate(Ctx& c) {
  const auto corpus = c.ref("corpus");
  const int n = c.int_param("n", kDefaultGramSize);
  if (n < 2) c.fail("n", "must be >= 2");
  const auto max_samples = c.u64("max_samples", 20);
  const auto& bl = c.raw("benchmarks");
  if (!bl.is_array() || bl.empty()) c.fail("benchmarks", "must be a non-empty list");
  std::vector<BenchmarkSource> benches;
  for (const auto& b : bl) {
    if (!b.is_object() || !b.contains("name") || !b.contains("path") || !b["name"].is_string())
      c.fail("benchmarks", "entries need a string 'name' and a 'path' reference");
    BenchmarkSource src;
    src.name = b["name"].get<std::string>();
    src.path = c.resolve("benchmarks", b["path"]);
    if (b.contains("fields")) src.fields = string_list(c, b["fields"], "benchmarks.fields");
    benches.push_back(std::move(src));
  }
  if (c.check_only()) return;
  IndexBuildReport ir;
  const auto index = build_index(benches, n, &ir);
  index.save(c.out("index"));
  const auto dr = decontaminate_file(corpus, index, c.out("corpus"), c.jobs(), max_samples);
  finish_report(c, {{"index", ir.to_json()}, {"decontamination", dr.to_json()}, {"n", n},
                    {"normalization", kNormalizationTag}});
}

void run_stats(Ctx& c) {
  const auto baseline = c.ref("baseline");
  const auto runs = c.ref_map("runs");
  const auto metrics = c.opt_ref("metrics");
  const bool lower = c.flag("lower_is_better", false);
  if (c.check_only()) return;
  std::vector<FilterRun> fr;
  for (const auto& [name, p] : runs) fr.push_back({name, p});
  std::optional<MetricTable> mt;
  if (metrics)
    mt = read_metric_table_csv(*metrics, lower ? Direction::lower_is_better : Direction::higher_is_better);
  const auto rep = compare_filter_files(baseline, fr, mt);
  finish_report(c, rep.to_json());
  std::ofstream csv(c.out("csv"), std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot write " + c.out("csv").string());
  csv << rep.to_csv();
}

void dispatch(Ctx& c) {
  static const std::map<std::string, std::function<void(Ctx&)>> table = {
      {"build-trainset", run_build_trainset}, {"embed-handoff", run_embed_handoff},
      {"train-ngram", run_train_ngram},       {"train-mlp", run_train_mlp},
      {"build-refs", run_build_refs},         {"score", run_score},
      {"plan", run_plan},                     {"filter", run_filter},
      {"mix", run_mix},                       {"decontaminate", run_decontaminate},
      {"stats", run_stats},
  };
  table.at(c.stage().type)(c);
}

std::vector<StageConfig> topo_order(std::vector<StageConfig> stages) {
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < stages.size(); ++i) pos[stages[i].id] = i;
  std::vector<std::size_t> indegree(stages.size(), 0);
  std::vector<std::vector<std::size_t>> next(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i)
    for (const auto& d : stages[i].depends_on) {
      ++indegree[i];
      next[pos.at(d)].push_back(i);
    }
  std::vector<StageConfig> out;
  std::vector<bool> done(stages.size(), false);
  // Ready stages run in declaration order.
  while (out.size() < stages.size()) {
    std::size_t pick = stages.size();
    for (std::size_t i = 0; i < stages.size(); ++i)
      if (!done[i] && indegree[i] == 0) {
        pick = i;
        break;
      }
    if (pick == stages.size()) {
      std::string names;
      for (std::size_t i = 0; i < stages.size(); ++i)
        if (!done[i]) names += (names.empty() ? "" : ", ") + stages[i].id;
      throw ConfigError("cyclic dependency among stages: " + names);
    }
    done[pick] = true;
    for (auto n : next[pick]) --indegree[n];
    out.push_back(stages[pick]);
  }
  return out;
}

}  // namespace

std::string interpolate_env(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, 2, "${") == 0) {
      const auto close = s.find('}', i + 2);
      if (close == std::string::npos) throw ConfigError("unterminated ${ in '" + s + "'");
      const std::string name = s.substr(i + 2, close - i - 2);
      const char* v = std::getenv(name.c_str());
      if (!v) throw ConfigError("environment variable '" + name + "' is not set (used in '" + s + "')");
      out += v;
      i = close + 1;
    } else {
      out += s[i++];
    }
  }
  return out;
}

const StageConfig& PipelineConfig::stage(const std::string& id) const {
  for (const auto& s : stages)
    if (s.id == id) return s;
  throw ConfigError("no stage '" + id + "'");
}

PipelineConfig parse_config(const json& raw, const fs::path& base_dir, std::optional<std::uint64_t> seed_override) {
  if (!raw.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> top = {"language", "seed", "workdir", "inputs", "stages", "description"};
  for (const auto& [k, v] : raw.items())
    if (!top.contains(k)) throw ConfigError("unknown config key '" + k + "'");

  PipelineConfig cfg;
  cfg.base_dir = base_dir;
  if (!raw.contains("language") || !raw["language"].is_string() || raw["language"].get<std::string>().empty())
    throw ConfigError("'language' must be a non-empty string");
  cfg.language = raw["language"].get<std::string>();
  if (raw.contains("seed")) {
    if (!is_non_negative_integer(raw["seed"])) throw ConfigError("'seed' must be a non-negative integer");
    cfg.seed = raw["seed"].get<std::uint64_t>();
  }
  if (seed_override) cfg.seed = *seed_override;
  if (!raw.contains("workdir") || !raw["workdir"].is_string()) throw ConfigError("'workdir' must be a path string");
  cfg.workdir = resolve_path(raw["workdir"].get<std::string>(), base_dir);

  json canonical = raw;
  canonical.erase("workdir");
  canonical.erase("description");
  canonical["seed"] = cfg.seed;
  cfg.config_hash = hex64(fnv1a64(canonical.dump()));

  if (raw.contains("inputs")) {
    if (!raw["inputs"].is_object()) throw ConfigError("'inputs' must be an object of name -> path");
    for (const auto& [name, v] : raw["inputs"].items()) {
      if (!v.is_string()) throw ConfigError("input '" + name + "' must be a path string");
      const auto p = resolve_path(v.get<std::string>(), base_dir);
      if (!fs::exists(p)) throw ConfigError("missing path for input '" + name + "': " + p.string());
      cfg.inputs[name] = p;
    }
  }

  if (!raw.contains("stages") || !raw["stages"].is_array() || raw["stages"].empty())
    throw ConfigError("'stages' must be a non-empty list");
  std::vector<StageConfig> stages;
  std::set<std::string> ids;
  for (const auto& s : raw["stages"]) {
    if (!s.is_object()) throw ConfigError("every stage must be an object");
    if (!s.contains("id") || !s["id"].is_string() || !valid_id(s["id"].get<std::string>()))
      throw ConfigError("stage ids must be non-empty strings of letters, digits, '_' or '-'");
    StageConfig st;
    st.id = s["id"].get<std::string>();
    if (!ids.insert(st.id).second) throw ConfigError("duplicate stage id '" + st.id + "'");
    if (!s.contains("type") || !s["type"].is_string()) throw ConfigError("stage '" + st.id + "' has no type");
    st.type = s["type"].get<std::string>();
    const auto* type = find_type(st.type);
    if (!type) throw ConfigError("stage '" + st.id + "': unknown stage type '" + st.type + "'");
    st.params = s;
    st.params.erase("id");
    st.params.erase("type");
    for (const auto& [k, v] : st.params.items()) {
      const bool known = std::find(type->required.begin(), type->required.end(), k) != type->required.end() ||
                         std::find(type->optional.begin(), type->optional.end(), k) != type->optional.end();
      if (!known) throw ConfigError("stage '" + st.id + "': unknown key '" + k + "' for type " + st.type);
    }
    for (const auto& k : type->required)
      if (!st.params.contains(k)) throw ConfigError("stage '" + st.id + "': missing required key '" + k + "'");

    const fs::path dir = cfg.workdir / st.id;
    for (const auto& o : type->outputs) st.outputs[o.name] = dir / o.file;
    if (st.type == "embed-handoff") {
      const auto& corpora = st.params["corpora"];
      if (!corpora.is_object() || corpora.empty())
        throw ConfigError("stage '" + st.id + "': 'corpora' must be a non-empty object of name -> reference");
      fs::path emb_dir = dir;
      if (st.params.contains("embeddings_dir")) {
        if (!st.params["embeddings_dir"].is_string())
          throw ConfigError("stage '" + st.id + "': 'embeddings_dir' must be a path string");
        emb_dir = resolve_path(st.params["embeddings_dir"].get<std::string>(), base_dir);
      }
      for (const auto& [name, v] : corpora.items()) {
        if (!valid_id(name) || name == "requests")
          throw ConfigError("stage '" + st.id + "': invalid corpus name '" + name + "'");
        st.outputs[name] = emb_dir / (name + ".embx");
      }
    }

    std::vector<std::string> refs;
    collect_refs(st.params, refs);
    for (const auto& r : refs) {
      if (r[0] != '@') continue;
      const auto dot = r.find('.');
      const auto dep = r.substr(1, dot == std::string::npos ? std::string::npos : dot - 1);
      if (std::find(st.depends_on.begin(), st.depends_on.end(), dep) == st.depends_on.end())
        st.depends_on.push_back(dep);
    }
    stages.push_back(std::move(st));
  }
  for (const auto& st : stages)
    for (const auto& d : st.depends_on) {
      if (!ids.contains(d)) throw ConfigError("stage '" + st.id + "' refers to unknown stage '" + d + "'");
      if (d == st.id) throw ConfigError("cyclic dependency among stages: " + st.id);
    }
  cfg.stages = topo_order(std::move(stages));

  // Resolve every reference and type-check parameters without touching data.
  for (const auto& st : cfg.stages) {
    Ctx c(cfg, st, 1, true);
    dispatch(c);
  }
  return cfg;
}

PipelineConfig validate_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json raw = json::parse(in, nullptr, false, true);
  if (raw.is_discarded()) throw ConfigError(path.string() + ": malformed JSON");
  auto cfg = parse_config(raw, fs::absolute(path).parent_path(), seed_override);
  cfg.source = path;
  return cfg;
}

const char* stage_status_name(StageStatus s) {
  switch (s) {
    case StageStatus::pending: return "pending";
    case StageStatus::executed: return "executed";
    case StageStatus::skipped: return "skipped";
    case StageStatus::failed: return "failed";
    case StageStatus::planned: return "planned";
  }
  return "?";
}

json RunManifest::to_json() const {
  json st = json::array();
  for (const auto& s : stages) {
    json outs = json::object();
    for (const auto& [name, o] : s.outputs) {
      json j{{"path", o.path.string()}, {"hash", o.hash}};
      if (o.docs) j["docs"] = *o.docs;
      if (o.tokens) j["tokens"] = *o.tokens;
      outs[name] = j;
    }
    json e{{"id", s.id},
           {"type", s.type},
           {"status", stage_status_name(s.status)},
           {"skip_key", s.skip_key},
           {"inputs", s.inputs},
           {"outputs", outs},
           {"seconds", s.seconds}};
    if (!s.error.empty()) e["error"] = s.error;
    st.push_back(e);
  }
  return {{"config_hash", config_hash}, {"config", config.string()}, {"status", status}, {"stages", st}};
}

const StageRecord& RunManifest::stage(const std::string& id) const {
  for (const auto& s : stages)
    if (s.id == id) return s;
  throw ConfigError("no stage '" + id + "' in manifest");
}

namespace {

std::string hash_or_absent(const fs::path& p) { return fs::exists(p) ? file_content_hash(p) : "absent"; }

std::string compute_skip_key(const PipelineConfig& cfg, const StageConfig& st,
                             const std::map<std::string, std::string>& inputs) {
  std::string s = cfg.config_hash + "\n" + st.id + "\n" + st.type + "\n";
  for (const auto& [p, h] : inputs) s += h + "\n";
  return hex64(fnv1a64(s));
}

// True if stage.json records `key` and every recorded output still hashes the same.
bool up_to_date(const StageConfig& st, const fs::path& record, const std::string& key, StageRecord& rec) {
  if (!fs::exists(record)) return false;
  json j = json::parse(std::ifstream(record, std::ios::binary), nullptr, false);
  if (j.is_discarded() || j.value("skip_key", "") != key || !j.contains("outputs")) return false;
  for (const auto& [name, path] : st.outputs) {
    if (!j["outputs"].contains(name)) return false;
    const auto& o = j["outputs"][name];
    if (!fs::exists(path) || file_content_hash(path) != o.value("hash", "")) return false;
    OutputRecord out{path, o.value("hash", ""), {}, {}};
    if (o.contains("docs")) out.docs = o["docs"].get<std::uint64_t>();
    if (o.contains("tokens")) out.tokens = o["tokens"].get<std::uint64_t>();
    rec.outputs[name] = out;
  }
  return true;
}

void check_upstream(const PipelineConfig& cfg, const StageConfig& st) {
  for (const auto& d : st.depends_on) {
    const auto rec = cfg.workdir / d / kStageRecord;
    if (!fs::exists(rec)) throw StageError("stage '" + st.id + "': upstream stage '" + d + "' has no record");
    const auto j = read_json(rec);
    if (j.value("config_hash", "") != cfg.config_hash)
      throw DataError("stage '" + st.id + "': input from stage '" + d + "' was produced under config " +
                      j.value("config_hash", "") + ", expected " + cfg.config_hash);
  }
}

}  // namespace

RunManifest run_pipeline(const PipelineConfig& cfg, const RunOptions& opts) {
  RunManifest man;
  man.config_hash = cfg.config_hash;
  man.config = cfg.source;
  man.status = opts.dry_run ? "dry-run" : "ok";
  for (const auto& st : cfg.stages) man.stages.push_back({st.id, st.type, StageStatus::pending, {}, {}, {}, 0.0, {}});

  auto log = [&](const std::string& msg) {
    if (opts.log) *opts.log << msg << '\n';
  };
  auto write_manifest = [&] {
    if (!opts.dry_run) write_json(cfg.workdir / kRunManifest, man.to_json());
  };
  if (!opts.dry_run) fs::create_directories(cfg.workdir);

  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& st = cfg.stages[i];
    auto& rec = man.stages[i];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      Ctx probe(cfg, st, opts.jobs, true);
      dispatch(probe);
      for (const auto& p : probe.used()) rec.inputs[p.string()] = hash_or_absent(p);
      rec.skip_key = compute_skip_key(cfg, st, rec.inputs);
      const auto record = cfg.workdir / st.id / kStageRecord;

      if (up_to_date(st, record, rec.skip_key, rec)) {
        rec.status = StageStatus::skipped;
        log("[" + st.id + "] up to date, skipped");
        continue;
      }
      rec.outputs.clear();
      if (opts.dry_run) {
        rec.status = StageStatus::planned;
        log("[" + st.id + "] would run (" + st.type + ")");
        continue;
      }
      fs::remove(record);
      check_upstream(cfg, st);
      for (const auto& [name, p] : st.outputs) fs::create_directories(p.parent_path());
      log("[" + st.id + "] running " + st.type);
      Ctx c(cfg, st, opts.jobs, false);
      dispatch(c);

      json outs = json::object();
      for (const auto& [name, p] : st.outputs) {
        if (!fs::exists(p)) throw StageError("stage '" + st.id + "' did not produce output '" + name + "'");
        OutputRecord o{p, file_content_hash(p), {}, {}};
        json oj{{"path", p.string()}, {"hash", o.hash}};
        if (p.extension() == ".jsonl") {
          const auto m = scan_manifest({p});
          o.docs = m.doc_count;
          o.tokens = m.total_ws_tokens;
          oj["docs"] = m.doc_count;
          oj["tokens"] = m.total_ws_tokens;
        }
        rec.outputs[name] = o;
        outs[name] = oj;
      }
      write_json(record, {{"id", st.id},
                          {"type", st.type},
                          {"config_hash", cfg.config_hash},
                          {"skip_key", rec.skip_key},
                          {"inputs", rec.inputs},
                          {"outputs", outs}});
      rec.status = StageStatus::executed;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log("[" + st.id + "] done in " + std::to_string(rec.seconds) + " s");
    } catch (const std::exception& e) {
      rec.status = StageStatus::failed;
      rec.error = e.what();
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      man.status = "failed";
      log("[" + st.id + "] failed: " + std::string(e.what()));
      write_manifest();
      throw;
    }
  }
  write_manifest();
  return man;
}

}  // namespace qf

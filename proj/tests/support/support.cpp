#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "qf/hash.hpp"
#include "qf/pipeline.hpp"
#include "qf/rng.hpp"

#ifndef QF_TEST_DATA_DIR
#error "QF_TEST_DATA_DIR must be defined"
#endif

namespace qft {

namespace {

const std::vector<std::string> kFiller = {
    "the",   "of",    "and",  "to",    "in",     "is",    "was",    "for",   "on",    "that",  "with",
    "as",    "by",    "at",   "from",  "it",     "this",  "an",     "be",    "are",   "which", "or",
    "has",   "had",   "time", "year",  "people", "way",   "day",    "world", "life",  "city",  "house",
    "water", "food",  "work", "place", "part",   "group", "number", "point", "home",  "hand",  "week"};

const std::vector<std::string> kKnowledge = {
    "theorem",  "proof",     "equation",   "energy",    "molecule",  "cell",     "protein",   "history",
    "empire",   "century",   "river",      "climate",   "analysis",  "hypothesis", "experiment", "evidence",
    "algorithm", "function", "variable",   "integral",  "velocity",  "photosynthesis", "enzyme", "gravity",
    "democracy", "treaty",   "manuscript", "grammar",   "syllable",  "latitude", "volcano",   "mineral"};

const std::vector<std::string> kSpam = {
    "buy",    "cheap",  "click",  "here",   "discount", "free",  "offer",  "casino",  "bonus",
    "login",  "subscribe", "cookies", "shipping", "deal", "sale", "best", "price", "order",
    "now",    "coupon", "winner", "limited", "promo",   "cart",  "checkout", "unsubscribe", "password"};

const std::string& pick(const std::vector<std::string>& v, qf::Rng& rng) { return v[rng.index(v.size())]; }

std::string sentence(qf::Rng& rng, std::size_t n, double p_first, const std::vector<std::string>& first,
                     double p_second, const std::vector<std::string>& second) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    const double u = rng.uniform();
    if (u < p_first) s += pick(first, rng);
    else if (u < p_first + p_second) s += pick(second, rng);
    else s += pick(kFiller, rng);
  }
  return s;
}

}  // namespace

fs::path scratch_dir(std::string_view name) {
  const fs::path p = fs::temp_directory_path() / ("qf-tests-" + std::to_string(::getpid())) / std::string(name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path data_dir() { return QF_TEST_DATA_DIR; }

std::vector<qf::LabeledSample> separable_samples(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed,
                                                 std::string_view prefix) {
  qf::Rng rng(seed);
  std::vector<qf::LabeledSample> out;
  auto make = [&](std::size_t i, bool pos) {
    const std::size_t len = 5 + rng.index(20);
    std::string text = sentence(rng, len, 0.0, kFiller, 0.0, kFiller);
    // marker at a random position
    const std::size_t at = rng.index(len + 1);
    std::istringstream in(text);
    std::string tok, rebuilt;
    std::size_t k = 0;
    const std::string marker = pos ? "alpha" : "beta";
    while (in >> tok) {
      if (k == at) rebuilt += marker + " ";
      rebuilt += tok + " ";
      ++k;
    }
    if (at >= k) rebuilt += marker;
    while (!rebuilt.empty() && rebuilt.back() == ' ') rebuilt.pop_back();
    qf::LabeledSample s;
    s.id = std::string(prefix) + (pos ? "-pos-" : "-neg-") + std::to_string(i);
    s.text = rebuilt;
    s.label = pos ? qf::Label::positive : qf::Label::negative;
    s.source = pos ? "pos" : "neg";
    out.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < n_pos; ++i) make(i, true);
  for (std::size_t i = 0; i < n_neg; ++i) make(i, false);
  return out;
}

std::vector<qf::Document> toy_corpus(std::size_t n, std::uint64_t seed, std::string_view lang) {
  qf::Rng rng(seed);
  std::vector<qf::Document> docs;
  docs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    qf::Document d;
    char id[32];
    std::snprintf(id, sizeof(id), "web-%06zu", i);
    d.id = id;
    d.lang = std::string(lang);
    const bool quality = rng.uniform() < 0.3;
    if (quality) {
      d.text = sentence(rng, 30 + rng.index(60), 0.55, kKnowledge, 0.02, kSpam);
    } else {
      d.text = sentence(rng, 60 + rng.index(340), 0.45, kSpam, 0.05, kKnowledge);
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

void write_positive_records(const fs::path& path, std::size_t n, std::uint64_t seed) {
  qf::Rng rng(seed);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json j{{"id", "q" + std::to_string(i)},
                     {"question", sentence(rng, 8 + rng.index(12), 0.6, kKnowledge, 0.0, kSpam) + " ?"},
                     {"answer", sentence(rng, 10 + rng.index(40), 0.55, kKnowledge, 0.0, kSpam)}};
    out << j.dump() << '\n';
  }
}

std::vector<float> fake_embed(std::string_view text, std::size_t dim) {
  std::vector<float> v(dim, 0.0f);
  std::size_t n = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\n' || text[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < text.size() && !(text[i] == ' ' || text[i] == '\n' || text[i] == '\t')) ++i;
    if (i == b) break;
    const auto h = qf::fnv1a64(text.substr(b, i - b));
    v[h % dim] += (h >> 63) ? -1.0f : 1.0f;
    v[(h >> 20) % dim] += ((h >> 62) & 1) ? -0.5f : 0.5f;
    ++n;
  }
  if (n > 0) {
    const float s = 1.0f / std::sqrt(static_cast<float>(n));
    for (auto& x : v) x *= s;
  }
  return v;
}

void embed_corpus(const fs::path& docs, const fs::path& out, std::size_t dim, std::string_view model) {
  qf::EmbeddingWriter w(out, dim, nlohmann::json{{"model", model}}.dump());
  qf::DocumentReader reader(docs);
  qf::Document d;
  while (reader.next(d)) {
    const auto v = fake_embed(d.text, dim);
    w.write(d.id, v);
  }
  w.finish();
}

void fulfil_embed_requests(const fs::path& requests, std::string_view model) {
  std::ifstream in(requests);
  const auto j = nlohmann::json::parse(in);
  const auto dim = j.at("dim").get<std::size_t>();
  for (const auto& s : j.at("shards")) {
    const fs::path out = s.at("embeddings").get<std::string>();
    fs::create_directories(out.parent_path());
    embed_corpus(s.at("docs").get<std::string>(), out, dim, model);
  }
}

ClusterData gaussian_clusters(std::size_t n_per_class, std::size_t dim, std::uint64_t seed, double separation,
                              double noise, std::string_view prefix) {
  qf::Rng rng(seed);
  std::vector<double> dir(dim);
  double norm = 0.0;
  for (auto& x : dir) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : dir) x *= separation / norm;
  ClusterData out;
  out.embeddings.dim = dim;
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const bool pos = i % 2 == 0;
    qf::LabeledSample s;
    s.id = std::string(prefix) + "-" + std::to_string(i);
    s.label = pos ? qf::Label::positive : qf::Label::negative;
    s.source = pos ? "pos" : "neg";
    s.text = s.id;
    for (std::size_t j = 0; j < dim; ++j)
      out.embeddings.values.push_back(static_cast<float>((pos ? dir[j] : -dir[j]) + rng.normal(0.0, noise)));
    out.embeddings.ids.push_back(s.id);
    out.samples.push_back(std::move(s));
  }
  return out;
}

double mlp_gradient_check(const qf::MlpParams<double>& params, std::size_t batch, double dropout, std::uint64_t seed,
                          std::size_t sample, double h) {
  qf::Rng rng(seed);
  qf::MlpParams<double> p = params;
  const std::size_t in = p.input_dim, hidden = p.hidden_dim;
  std::vector<double> xs(batch * in);
  for (auto& x : xs) x = rng.normal();
  std::vector<const double*> rows;
  for (std::size_t b = 0; b < batch; ++b) rows.push_back(xs.data() + b * in);
  std::vector<double> labels(batch);
  for (auto& y : labels) y = rng.uniform() < 0.5 ? 1.0 : 0.0;
  std::vector<std::uint8_t> masks;
  double scale = 1.0;
  if (dropout > 0.0) {
    masks.resize(batch * hidden);
    for (auto& k : masks) k = rng.uniform() >= dropout ? 1 : 0;
    scale = 1.0 / (1.0 - dropout);
  }
  qf::MlpParams<double> grad(in, hidden);
  qf::mlp_math::batch_loss_and_gradient<double, double>(p, rows, labels, masks, scale, grad);

  std::vector<std::span<double>> tensors, grads;
  p.for_each_tensor([&](std::span<double> t) { tensors.push_back(t); });
  grad.for_each_tensor([&](std::span<double> t) { grads.push_back(t); });
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < tensors.size(); ++t)
    for (std::size_t i = 0; i < tensors[t].size(); ++i) coords.emplace_back(t, i);
  if (sample > 0 && sample < coords.size()) {
    rng.shuffle(std::span(coords));
    coords.resize(sample);
  }
  // loss only, through the library forward pass
  std::vector<double> pre(hidden), act(hidden);
  auto loss = [&] {
    double sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::uint8_t* keep = masks.empty() ? nullptr : masks.data() + b * hidden;
      const double z = qf::mlp_math::forward(p, rows[b], keep, scale, pre.data(), act.data());
      sum += qf::mlp_math::bce_with_logit(z, labels[b]);
    }
    return sum / static_cast<double>(batch);
  };
  double worst = 0.0;
  for (const auto& [t, i] : coords) {
    double& w = tensors[t][i];
    const double keep = w;
    w = keep + h;
    const double lp = loss();
    w = keep - h;
    const double lm = loss();
    w = keep;
    const double numeric = (lp - lm) / (2 * h);
    const double analytic = grads[t][i];
    const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-7});
    worst = std::max(worst, err);
  }
  return worst;
}

fs::path write_toy_pipeline(const fs::path& dir, std::size_t n_docs, std::uint64_t seed, const std::string& workdir) {
  fs::create_directories(dir);
  auto docs = toy_corpus(n_docs, 100 + n_docs);
  const std::string bench =
      "which mineral forms the bulk of the volcano described in the survey of the river valley latitude";
  // a few documents quote the benchmark question
  for (std::size_t i = 3; i < docs.size(); i += std::max<std::size_t>(docs.size() / 4, 1))
    docs[i].text += " theorem " + bench + " evidence";
  qf::write_documents(docs, dir / "corpus.jsonl");
  write_positive_records(dir / "positives.jsonl", 300, 17);
  {
    std::ofstream out(dir / "bench.jsonl", std::ios::binary | std::ios::trunc);
    out << nlohmann::json{{"id", "quiz-1"}, {"question", bench}}.dump() << '\n';
  }
  {
    std::ofstream out(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    out << "task,ngram,decont\nt1,0.5,0.4\nt2,0.3,0.6\n";
  }
  using nlohmann::json;
  json cfg{
      {"language", "eng_Latn"},
      {"seed", seed},
      {"workdir", workdir},
      {"description", "toy end-to-end run"},
      {"inputs", {{"corpus", "corpus.jsonl"}, {"positives", "positives.jsonl"}, {"bench", "bench.jsonl"},
                  {"metrics", "metrics.csv"}}},
      {"stages",
       json::array({
           {{"id", "trainset"},
            {"type", "build-trainset"},
            {"positives", json::array({{{"name", "qa"}, {"path", "$positives"}, {"fields", {"question", "answer"}}}})},
            {"negatives", "$corpus"},
            {"cap_per_class", 250},
            {"heldout_fraction", 0.1}},
           {{"id", "ngram"},
            {"type", "train-ngram"},
            {"train", "@trainset.train"},
            {"heldout", "@trainset.heldout"},
            {"dim", 16},
            {"buckets", 20000}},
           {{"id", "score"}, {"type", "score"}, {"scorer", "ngram"}, {"corpus", "$corpus"}, {"model", "@ngram.model"}},
           {{"id", "plan"}, {"type", "plan"}, {"scores", "@score"}, {"retention", 0.2}},
           {{"id", "filter"}, {"type", "filter"}, {"plan", "@plan"}, {"corpus", "$corpus"}},
           {{"id", "decont"},
            {"type", "decontaminate"},
            {"corpus", "@filter"},
            {"benchmarks", json::array({{{"name", "quiz"}, {"path", "$bench"}, {"fields", {"question"}}}})}},
           {{"id", "embed"},
            {"type", "embed-handoff"},
            {"corpora", {{"train", "@trainset.train"}, {"heldout", "@trainset.heldout"}, {"corpus", "$corpus"}}},
            {"model", kFakeModel},
            {"dim", 32}},
           {{"id", "mlp"},
            {"type", "train-mlp"},
            {"train", "@trainset.train"},
            {"heldout", "@trainset.heldout"},
            {"embeddings", {"@embed.train", "@embed.heldout"}},
            {"hidden", 16},
            {"lr", 0.003},
            {"batch_size", 32}},
           {{"id", "refs"}, {"type", "build-refs"}, {"train", "@trainset.train"}, {"embeddings", {"@embed.train"}},
            {"k", 64}},
           {{"id", "score_mlp"},
            {"type", "score"},
            {"scorer", "mlp"},
            {"corpus", "$corpus"},
            {"model", "@mlp.model"},
            {"embeddings", "@embed.corpus"}},
           {{"id", "score_cos"},
            {"type", "score"},
            {"scorer", "cosine"},
            {"corpus", "$corpus"},
            {"refs", "@refs"},
            {"embeddings", "@embed.corpus"}},
           {{"id", "plan_cos"},
            {"type", "plan"},
            {"scores", "@score_cos"},
            {"token_budget", 2000},
            {"corpus", "$corpus"},
            {"min_retention", 0.05}},
           {{"id", "filter_cos"}, {"type", "filter"}, {"plan", "@plan_cos"}, {"corpus", "$corpus"}},
           {{"id", "mix"}, {"type", "mix"}, {"filtered", "@decont"}, {"raw", "$corpus"}, {"rate", 0.1}},
           {{"id", "stats"},
            {"type", "stats"},
            {"baseline", "$corpus"},
            {"runs", {{"ngram", "@filter"}, {"decont", "@decont"}, {"cosine", "@filter_cos"}}},
            {"metrics", "$metrics"}},
       })}};
  const fs::path path = dir / "pipeline.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << cfg.dump(2) << '\n';
  return path;
}

void run_toy_pipeline_two_phase(const fs::path& config, std::size_t jobs) {
  const auto cfg = qf::validate_config(config);
  qf::RunOptions opts;
  opts.jobs = jobs;
  try {
    qf::run_pipeline(cfg, opts);
    throw std::runtime_error("expected the pipeline to stop at the embedding handoff");
  } catch (const qf::EmbeddingsPending&) {
  }
  fulfil_embed_requests(cfg.stage("embed").outputs.at("requests"));
  qf::run_pipeline(cfg, opts);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace qft

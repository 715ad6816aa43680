// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// blocking check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qf/analytics.hpp"
#include "qf/corpus.hpp"
#include "qf/cosine.hpp"
#include "qf/decontam.hpp"
#include "qf/mlp.hpp"
#include "qf/ngram.hpp"
#include "qf/pipeline.hpp"
#include "qf/rng.hpp"
#include "qf/selector.hpp"
#include "qf/trainset.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  bool blocking = true;
  std::string detail;
};

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      out_.pass = false;
      failures_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  Outcome finish() {
    std::string d;
    for (const auto& n : notes_) d += (d.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) d += (d.empty() ? "" : "; ") + std::string("failed: ") + f;
    out_.detail = d;
    return out_;
  }
  void non_blocking() { out_.blocking = false; }

 private:
  Outcome out_;
  std::vector<std::string> notes_;
  std::vector<std::string> failures_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome rank_aggregation() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::pair<std::string, std::vector<double>>> cases{
      {"english_comparison.csv", {1.8333, 2.3889, 2.4444, 3.3333}},
      {"decontam_comparison.csv", {1.5000, 2.1111, 3.0556, 3.3333}},
  };
  for (const auto& [file, expected] : cases) {
    const auto t = qf::read_metric_table_csv(qft::data_dir() / file);
    c.expect(t.tasks.size() == 9, file + " has nine task rows");
    const auto r = qf::average_rank(t);
    double sum = 0.0;
    std::string got;
    for (std::size_t i = 0; i < r.size(); ++i) {
      c.expect(i < expected.size() && std::abs(r[i] - expected[i]) <= 1e-4, file + " rank of " + t.approaches[i]);
      sum += r[i];
      got += (i ? "/" : "") + fmt("%.4f", r[i]);
    }
    c.expect(std::abs(sum - 10.0) < 1e-9, file + " rank sum");
    c.note(file + " " + got);
  }
  c.note(fmt("%.1f ms", seconds_since(t0) * 1e3));
  return c.finish();
}

Outcome budget_math() {
  Checker c;
  // corpus totals in billions of whitespace tokens, target 70B, fixed 10% floor
  const std::vector<std::tuple<std::string, double, int>> langs{
      {"zho", 1597, 10}, {"fra", 730, 10}, {"deu", 973, 10}, {"arb", 127, 56}, {"dan", 108, 65}};
  for (const auto& [lang, total_b, expected] : langs) {
    qf::CorpusManifest m;
    m.doc_count = 1;
    m.total_ws_tokens = static_cast<std::uint64_t>(total_b * 1e9);
    const auto r = qf::retention_for_budget(m, 70e9, 0.10);
    c.expect(std::abs(r.fraction * 100.0 - expected) <= 1.0, lang);
    c.note(lang + " " + fmt("%.1f%%", r.fraction * 100.0));
  }
  return c.finish();
}

Outcome selection() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  qf::Rng rng(2024);
  qf::ScoreTable t;
  t.scorer = "acceptance";
  for (int i = 0; i < 10000; ++i) {
    // 400 distinct levels: every cut point falls inside a block of ties
    const double s = static_cast<double>(rng.index(400)) / 400.0;
    char id[16];
    std::snprintf(id, sizeof(id), "d%05d", i);
    t.entries.push_back({id, s});
  }
  rng.shuffle(std::span(t.entries));
  auto sorted = t.entries;
  std::sort(sorted.begin(), sorted.end(), [](const qf::ScoreEntry& a, const qf::ScoreEntry& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
  std::vector<std::string> prev;
  std::size_t tie_cuts = 0;
  for (double p : {0.10, 0.15, 0.20}) {
    const auto plan = qf::plan_selection(t, p);
    const auto k = static_cast<std::size_t>(std::llround(p * 10000));
    std::vector<std::string> expected;
    for (std::size_t i = 0; i < k; ++i) expected.push_back(sorted[i].doc_id);
    c.expect(plan.retained == expected, "oracle at p=" + fmt("%.2f", p));
    if (sorted[k - 1].score == sorted[k].score) ++tie_cuts;
    c.expect(std::equal(prev.begin(), prev.end(), plan.retained.begin()), "nesting at p=" + fmt("%.2f", p));
    const qf::ScoreSource src = [&](const std::function<void(std::string_view, double)>& sink) {
      for (const auto& e : t.entries) sink(e.doc_id, e.score);
    };
    c.expect(qf::plan_selection_two_pass(src, p).retained == plan.retained, "two-pass at p=" + fmt("%.2f", p));
    prev = plan.retained;
  }
  c.expect(tie_cuts > 0, "a cut inside a tie block was exercised");
  const double secs = seconds_since(t0);
  c.expect(secs < 1.0, "runtime < 1 s");
  c.note(std::to_string(tie_cuts) + "/3 cuts inside ties, " + fmt("%.3f s", secs));
  return c.finish();
}

Outcome ngram_classifier() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = qft::separable_samples(1000, 1000, 31, "train");
  const auto held = qft::separable_samples(250, 250, 32, "held");
  const auto preset = qf::ngram_preset("default");
  auto cfg = preset.train;
  cfg.seed = 1;
  const auto model = qf::train_ngram(train, preset.tokenizer, cfg);
  std::size_t correct = 0;
  double worst_sum = 0.0;
  for (const auto& s : held) {
    const auto p = model.probabilities(s.text);
    worst_sum = std::max(worst_sum, std::abs(p[0] + p[1] - 1.0));
    correct += (p[1] >= 0.5) == (s.label == qf::Label::positive);
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(held.size());
  c.expect(acc >= 0.99, "held-out accuracy >= 0.99");
  c.expect(worst_sum < 1e-6, "probabilities sum to 1");

  // float64 gradient check at the trained weights, every weight touched by the example
  const std::size_t dim = static_cast<std::size_t>(model.dim());
  std::vector<double> input(model.input_embeddings().begin(), model.input_embeddings().end());
  std::vector<double> output(model.output_weights().begin(), model.output_weights().end());
  double worst_rel = 0.0;
  std::size_t checked = 0;
  for (std::size_t e = 0; e < 6; ++e) {
    const auto& s = held[e * 80];
    const auto feats = model.featurize(qf::prepare_text(s.text, model.tokenizer()));
    const int label = s.label == qf::Label::positive ? 1 : 0;
    std::vector<double> h(dim), dout(2 * dim), dh(dim), h2(dim), o2(2 * dim), dh2(dim);
    qf::ngram_math::loss_and_gradient<double>(input, output, dim, feats, label, h, dout, dh);
    auto loss = [&] { return qf::ngram_math::loss_and_gradient<double>(input, output, dim, feats, label, h2, o2, dh2); };
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); };
    // five-point central stencil; the trained model is confident, so some
    // components are ~1e-7 and the three-point truncation error shows up
    auto central = [&](double& w) {
      const double step = 1e-4;
      const double keep = w;
      double f[4];
      const double offs[4] = {-2 * step, -step, step, 2 * step};
      for (int k = 0; k < 4; ++k) {
        w = keep + offs[k];
        f[k] = loss();
      }
      w = keep;
      return (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step);
    };
    for (std::size_t i = 0; i < output.size(); ++i) {
      worst_rel = std::max(worst_rel, rel(dout[i], central(output[i])));
      ++checked;
    }
    std::map<std::uint32_t, int> occ;
    for (auto f : feats) ++occ[f];
    for (const auto& [row, count] : occ)
      for (std::size_t j = 0; j < dim; ++j) {
        const double analytic = dh[j] * count / static_cast<double>(feats.size());
        worst_rel = std::max(worst_rel, rel(analytic, central(input[row * dim + j])));
        ++checked;
      }
  }
  c.expect(worst_rel < 1e-4, "gradient check");
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime < 1 min");
  c.note("accuracy " + fmt("%.4f", acc) + ", max |sum-1| " + fmt("%.1e", worst_sum) + ", grad rel err " +
         fmt("%.1e", worst_rel) + " over " + std::to_string(checked) + " weights, " + fmt("%.1f s", secs));
  return c.finish();
}

Outcome mlp_classifier() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = qft::gaussian_clusters(2500, 768, 41, 1.5, 0.1);
  std::vector<qf::LabeledSample> train, held;
  for (std::size_t i = 0; i < data.samples.size(); ++i) (i % 10 == 0 ? held : train).push_back(data.samples[i]);
  qf::MlpConfig cfg;  // hidden 256, 6 epochs, lr 3e-4, dropout 0.2
  cfg.seed = 3;
  qf::MlpTrainReport rep, rep2;
  const auto a = qf::train_mlp(train, held, data.embeddings, cfg, &rep);
  const auto b = qf::train_mlp(train, held, data.embeddings, cfg, &rep2);
  c.expect(rep.heldout_accuracy >= 0.99, "held-out accuracy >= 0.99");
  c.expect(a == b && rep.epoch_loss == rep2.epoch_loss, "bit-identical retraining");
  const auto dir = qft::scratch_dir("acc-mlp");
  a.save(dir / "a.mlpq");
  b.save(dir / "b.mlpq");
  c.expect(qft::read_file(dir / "a.mlpq") == qft::read_file(dir / "b.mlpq"), "identical model files");

  // every parameter of the full-size network at the trained weights, dropout off
  const double grad_err = qft::mlp_gradient_check(a.params().cast<double>(), 1, 0.0, 5);
  c.expect(grad_err < 1e-4, "gradient check");
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, "runtime < 2 min");
  c.note("accuracy " + fmt("%.4f", rep.heldout_accuracy) + ", loss " + fmt("%.4f", rep.initial_loss) + " -> " +
         fmt("%.4f", rep.final_loss) + ", grad rel err " + fmt("%.1e", grad_err) + " over " +
         std::to_string(a.params().parameter_count()) + " parameters, " + fmt("%.1f s", secs));
  return c.finish();
}

Outcome cosine_scorer() {
  Checker c;
  const auto docs = qf::read_embeddings(qft::data_dir() / "cosine_docs.embx");
  const auto ref_m = qf::read_embeddings(qft::data_dir() / "cosine_refs.embx");
  const auto refs = qf::build_reference_set(ref_m, ref_m.rows(), 0);
  c.expect(docs.rows() == 100 && refs.size() == 64, "fixture shape 100 x 64");
  const auto got = qf::score_cosine(refs, docs).table.entries;

  std::map<std::string, double> numpy;
  {
    std::ifstream in(qft::data_dir() / "cosine_expected.tsv");
    std::string id;
    double v;
    while (in >> id >> v) numpy[id] = v;
  }
  double worst_np = 0.0, worst_bf = 0.0;
  for (std::size_t i = 0; i < docs.rows(); ++i) {
    worst_np = std::max(worst_np, std::abs(got[i].score - numpy.at(got[i].doc_id)));
    // float64 brute force from the raw rows
    double dn = 0;
    for (float x : docs.row(i)) dn += static_cast<double>(x) * x;
    double best = -1.0;
    if (dn > 0) {
      best = -2.0;
      for (std::size_t r = 0; r < ref_m.rows(); ++r) {
        double dot = 0, rn = 0;
        for (std::size_t j = 0; j < ref_m.dim; ++j) {
          dot += static_cast<double>(ref_m.row(r)[j]) * docs.row(i)[j];
          rn += static_cast<double>(ref_m.row(r)[j]) * ref_m.row(r)[j];
        }
        best = std::max(best, dot / std::sqrt(rn * dn));
      }
    }
    worst_bf = std::max(worst_bf, std::abs(got[i].score - best));
  }
  c.expect(worst_np <= 1e-5, "numpy oracle");
  c.expect(worst_bf <= 1e-5, "float64 brute-force oracle");

  // self-similarity, orthogonality, positive scale
  qf::EmbeddingMatrix probe;
  probe.dim = ref_m.dim;
  qf::Rng rng(8);
  std::vector<float> orth(probe.dim);
  {
    // Gram-Schmidt a random vector against every reference
    std::vector<double> v(probe.dim);
    for (auto& x : v) x = rng.normal();
    std::vector<std::vector<double>> basis;
    for (std::size_t r = 0; r < refs.size(); ++r) {
      std::vector<double> u(refs.vectors.row(r).begin(), refs.vectors.row(r).end());
      for (const auto& b : basis) {
        double d = 0;
        for (std::size_t j = 0; j < u.size(); ++j) d += u[j] * b[j];
        for (std::size_t j = 0; j < u.size(); ++j) u[j] -= d * b[j];
      }
      double n = 0;
      for (double x : u) n += x * x;
      for (auto& x : u) x /= std::sqrt(n);
      basis.push_back(u);
    }
    for (const auto& b : basis) {
      double d = 0;
      for (std::size_t j = 0; j < v.size(); ++j) d += v[j] * b[j];
      for (std::size_t j = 0; j < v.size(); ++j) v[j] -= d * b[j];
    }
    for (std::size_t j = 0; j < v.size(); ++j) orth[j] = static_cast<float>(v[j]);
  }
  probe.ids = {"self", "orth", "scaled", "base"};
  probe.values.insert(probe.values.end(), ref_m.row(5).begin(), ref_m.row(5).end());
  probe.values.insert(probe.values.end(), orth.begin(), orth.end());
  for (float x : docs.row(11)) probe.values.push_back(x * 37.5f);
  probe.values.insert(probe.values.end(), docs.row(11).begin(), docs.row(11).end());
  const auto ps = qf::score_cosine(refs, probe).table.entries;
  c.expect(std::abs(ps[0].score - 1.0) <= 1e-6, "self-similarity = 1");
  c.expect(std::abs(ps[1].score) <= 1e-5, "orthogonality = 0");
  c.expect(std::abs(ps[2].score - ps[3].score) <= 1e-6, "positive-scale invariance");
  c.note("max |err| numpy " + fmt("%.1e", worst_np) + ", brute force " + fmt("%.1e", worst_bf) + ", self " +
         fmt("%.7f", ps[0].score) + ", orth " + fmt("%.1e", ps[1].score));
  return c.finish();
}

Outcome decontamination() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = qft::scratch_dir("acc-decont");

  // Preamble case
  const auto idx =
      qf::build_index({{"mmlu", qft::data_dir() / "mmlu_preamble.jsonl", {"question", "choices"}}}, 13);
  const auto rep = qf::decontaminate_file(qft::data_dir() / "preamble_docs.jsonl", idx, dir / "clean.jsonl");
  const auto kept = qf::read_documents(dir / "clean.jsonl");
  c.expect(rep.removed_docs == 1 && kept.size() == 1 && kept[0].id == "web-clean", "preamble document removed");
  const std::string gram = rep.samples.empty() ? "" : rep.samples[0].gram;
  c.expect(gram.find("provide for the common defence promote") == 0, "matched 13-gram");
  c.note("matched \"" + gram + "\"");

  // 10,000 documents, 16 seeded
  auto docs = qft::toy_corpus(10000, 77);
  const std::vector<std::string> bench{
      "in which year did the treaty establishing the northern river commission enter into force for all parties",
      "what is the approximate latitude of the volcano whose eruption buried the ancient harbour city",
      "which enzyme in the liver converts the stored protein reserves into usable energy during fasting",
      "how many syllables does the opening line of the anonymous manuscript contain in its original grammar"};
  std::vector<std::pair<std::string, std::string>> texts;
  for (const auto& b : bench) texts.emplace_back("quiz", b);
  const auto index = qf::build_index_from_texts(texts, 13);
  qf::Rng rng(5);
  std::set<std::size_t> seeded;
  while (seeded.size() < 16) seeded.insert(rng.index(docs.size()));
  std::size_t k = 0;
  for (auto i : seeded) docs[i].text = "intro words " + bench[k++ % bench.size()] + " closing words";
  qf::write_documents(docs, dir / "big.jsonl");
  const auto big = qf::decontaminate_file(dir / "big.jsonl", index, dir / "big_clean.jsonl", 2);
  c.expect(big.total_docs == 10000 && big.removed_docs == 16, "16 of 10,000 flagged");
  c.expect(big.contamination_rate() == 0.0016, "rate 0.1600%");
  c.note("rate " + fmt("%.4f%%", big.contamination_rate() * 100.0));

  // hashed window scan vs naive string windows on 1,000 random small docs
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f", "G,", "h!"};
  auto random_text = [&](std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + vocab[rng.index(vocab.size())];
    return s;
  };
  std::vector<std::pair<std::string, std::string>> small_bench;
  for (int i = 0; i < 40; ++i) small_bench.emplace_back("b", random_text(6 + rng.index(8)));
  const int n = 4;
  const auto small_idx = qf::build_index_from_texts(small_bench, n);
  std::set<std::string> naive;
  auto join = [](const std::vector<std::string>& t, std::size_t b) {
    std::string s;
    for (std::size_t i = b; i < b + n; ++i) s += (i > b ? " " : "") + t[i];
    return s;
  };
  for (const auto& [_, t] : small_bench) {
    const auto toks = qf::normalize_for_ngrams(t);
    for (std::size_t i = 0; i + n <= toks.size(); ++i) naive.insert(join(toks, i));
  }
  std::size_t agree = 0, hits = 0;
  for (int d = 0; d < 1000; ++d) {
    const auto text = random_text(rng.index(12));
    const auto toks = qf::normalize_for_ngrams(text);
    bool expected = false;
    for (std::size_t i = 0; i + n <= toks.size() && !expected; ++i) expected = naive.count(join(toks, i)) > 0;
    agree += qf::find_contamination(small_idx, text).has_value() == expected;
    hits += expected;
  }
  c.expect(agree == 1000, "hashed scan equals naive oracle");
  c.note("naive agreement " + std::to_string(agree) + "/1000 (" + std::to_string(hits) + " contaminated), " +
         fmt("%.1f s", seconds_since(t0)));
  return c.finish();
}

Outcome length_bias() {
  Checker c;
  const auto dir = qft::scratch_dir("acc-length");
  const auto docs = qft::toy_corpus(4000, 12);
  qf::write_documents(docs, dir / "corpus.jsonl");
  qft::write_positive_records(dir / "pos.jsonl", 1500, 4);
  qf::TrainsetSpec spec;
  spec.lang = "eng_Latn";
  spec.positive_sources = {{"qa", dir / "pos.jsonl", {"question", "answer"}}};
  spec.negative_corpus = dir / "corpus.jsonl";
  spec.cap_per_class = 1000;
  spec.seed = 1;
  qf::build_trainset(spec, {dir / "train.jsonl", dir / "heldout.jsonl", {}});
  auto preset = qf::ngram_preset("default");
  preset.train.bucket_count = 200000;
  const auto model = qf::train_ngram(qf::read_labeled_samples(dir / "train.jsonl"), preset.tokenizer, preset.train);
  const auto scores = qf::score_ngram_corpus(model, dir / "corpus.jsonl", 1);
  const auto plan = qf::plan_selection(scores, 0.10);
  qf::filter_corpus(dir / "corpus.jsonl", plan, dir / "top10.jsonl");
  const auto rep = qf::compare_filter_files(dir / "corpus.jsonl", {{"top10", dir / "top10.jsonl"}});
  const auto& r = rep.runs.at(0);
  c.expect(std::abs(r.doc_fraction - 0.10) < 1e-12, "10% of documents retained");
  c.expect(r.token_fraction < r.doc_fraction, "token fraction below document fraction");
  c.note("docs " + fmt("%.2f%%", r.doc_fraction * 100) + ", tokens " + fmt("%.2f%%", r.token_fraction * 100) +
         ", mean length " + fmt("%.1f", rep.baseline.stats.mean) + " -> " + fmt("%.1f", r.stats.mean));
  return c.finish();
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = qft::read_file(e.path());
  return out;
}

Outcome end_to_end_determinism() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = qft::scratch_dir("acc-e2e");
  const auto config = qft::write_toy_pipeline(dir, 1500, 11);
  const auto workdir = dir / "work";

  qft::run_toy_pipeline_two_phase(config);
  auto first = snapshot(workdir);
  fs::remove_all(workdir);
  qft::run_toy_pipeline_two_phase(config, 2);
  auto second = snapshot(workdir);

  // the run manifest records wall-clock seconds; compare it without them
  auto strip = [](const std::string& s) {
    auto j = json::parse(s);
    for (auto& st : j["stages"]) st.erase("seconds");
    return j.dump();
  };
  c.expect(strip(first.at("run_manifest.json")) == strip(second.at("run_manifest.json")), "run manifest");
  first.erase("run_manifest.json");
  second.erase("run_manifest.json");
  std::size_t differing = 0;
  std::set<std::string> kinds;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      c.expect(false, name);
    }
    kinds.insert(fs::path(name).extension().string());
  }
  c.expect(first.size() == second.size(), "same file set");
  std::string exts;
  for (const auto& k : kinds) exts += (exts.empty() ? "" : " ") + k;
  c.note(std::to_string(first.size()) + " files byte-identical across runs with 1 and 2 workers (" + exts + "), " +
         fmt("%.1f s", seconds_since(t0)));
  return c.finish();
}

Outcome throughput() {
  Checker c;
  c.non_blocking();
  const auto dir = qft::scratch_dir("acc-speed");
  const auto train = qft::separable_samples(1000, 1000, 3);
  const auto preset = qf::ngram_preset("default");
  const auto model = qf::train_ngram(train, preset.tokenizer, preset.train);
  qf::write_documents(qft::toy_corpus(30000, 19), dir / "toy.jsonl");
  const double mb = static_cast<double>(fs::file_size(dir / "toy.jsonl")) / 1e6;
  const auto t0 = std::chrono::steady_clock::now();
  const auto scores = qf::score_ngram_corpus(model, dir / "toy.jsonl", 1);
  const double secs = seconds_since(t0);
  const double rate = mb / secs;
  c.expect(rate >= 20.0, "20 MB/s per worker");
  c.note(fmt("%.1f MB", mb) + " in " + fmt("%.2f s", secs) + " = " + fmt("%.1f MB/s", rate) + " on one worker (" +
         std::to_string(scores.entries.size()) + " docs)");
  if (rate < 10.0) {
    // more than 2x below target counts against the run
    Checker hard;
    hard.expect(false, "more than 2x below the 20 MB/s target");
    auto o = hard.finish();
    o.detail = c.finish().detail + "; " + o.detail;
    return o;
  }
  return c.finish();
}

}  // namespace

int main(int argc, char** argv) {
  // optional arguments select checks by name
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"rank-aggregation", rank_aggregation},
      {"budget-math", budget_math},
      {"selection", selection},
      {"ngram-classifier", ngram_classifier},
      {"mlp-classifier", mlp_classifier},
      {"cosine-scorer", cosine_scorer},
      {"decontamination", decontamination},
      {"length-bias", length_bias},
      {"end-to-end-determinism", end_to_end_determinism},
      {"throughput", throughput},
  };
  int blocking_failures = 0;
  for (const auto& [name, fn] : checks) {
    if (argc > 1 && std::find(argv + 1, argv + argc, name) == argv + argc) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const char* tag = o.pass ? "PASS" : (o.blocking ? "FAIL" : "FAIL (non-blocking)");
    std::printf("%s %s: %s\n", tag, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && o.blocking) ++blocking_failures;
  }
  return blocking_failures == 0 ? 0 : 1;
}

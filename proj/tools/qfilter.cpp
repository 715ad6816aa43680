// qfilter: command-line front end for the filtering library.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 stage failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qf/analytics.hpp"
#include "qf/corpus.hpp"
#include "qf/cosine.hpp"
#include "qf/decontam.hpp"
#include "qf/embedding_store.hpp"
#include "qf/error.hpp"
#include "qf/mlp.hpp"
#include "qf/ngram.hpp"
#include "qf/pipeline.hpp"
#include "qf/scores.hpp"
#include "qf/selector.hpp"
#include "qf/trainset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitStage = 4;

struct Spec {
  std::string name;
  fs::path path;
  std::vector<std::string> fields;
};

// "name=path" or "name=path:field1,field2".
Spec parse_spec(const std::string& s, const char* what) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw qf::ConfigError(std::string(what) + " must look like name=path[:fields], got '" + s + "'");
  Spec out;
  out.name = s.substr(0, eq);
  std::string rest = s.substr(eq + 1);
  const auto colon = rest.rfind(':');
  if (colon != std::string::npos && colon + 1 < rest.size() && rest.find('/', colon) == std::string::npos) {
    std::string f = rest.substr(colon + 1);
    rest = rest.substr(0, colon);
    std::size_t b = 0;
    while (b <= f.size()) {
      auto e = f.find(',', b);
      if (e == std::string::npos) e = f.size();
      if (e > b) out.fields.push_back(f.substr(b, e - b));
      b = e + 1;
    }
  }
  out.path = rest;
  return out;
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw qf::IoError("cannot write " + p.string());
  out << s;
}

qf::EmbeddingMatrix load_all(const std::vector<std::string>& paths) {
  qf::EmbeddingMatrix all;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    auto m = qf::read_embeddings(paths[i]);
    if (i == 0) {
      all = std::move(m);
      continue;
    }
    if (m.dim != all.dim) throw qf::DataError(paths[i] + ": embedding dimension differs from " + paths[0]);
    if (m.model_tag() != all.model_tag()) throw qf::DataError(paths[i] + ": encoder differs from " + paths[0]);
    all.ids.insert(all.ids.end(), m.ids.begin(), m.ids.end());
    all.values.insert(all.values.end(), m.values.begin(), m.values.end());
  }
  return all;
}

qf::EmbeddingMatrix in_corpus_order(const qf::EmbeddingMatrix& m, const fs::path& corpus) {
  std::vector<std::string> ids;
  qf::DocumentReader reader(corpus);
  qf::Document d;
  while (reader.next(d)) ids.push_back(d.id);
  const auto rows = qf::lookup_rows(m, ids);
  qf::EmbeddingMatrix out;
  out.dim = m.dim;
  out.extension = m.extension;
  out.ids = ids;
  for (auto r : rows) {
    auto row = m.row(r);
    out.values.insert(out.values.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based quality filtering for pretraining corpora"};
  app.require_subcommand(1);
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed_override;
  app.add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed-override", seed_override, "Replace the configured seed");

  // build-trainset
  auto* bt = app.add_subcommand("build-trainset", "Assemble a labelled classifier training set");
  std::vector<std::string> bt_pos;
  std::string bt_neg, bt_lang, bt_dir;
  std::uint64_t bt_cap = 80000, bt_seed = 0;
  double bt_heldout = 0.05;
  bt->add_option("--positive", bt_pos, "name=path[:field,...] positive source")->required();
  bt->add_option("--negatives", bt_neg, "Raw corpus for negatives")->required();
  bt->add_option("--lang", bt_lang, "Language code")->required();
  bt->add_option("--cap", bt_cap, "Samples per class");
  bt->add_option("--heldout", bt_heldout, "Held-out fraction per class");
  bt->add_option("--seed", bt_seed);
  bt->add_option("--out-dir", bt_dir)->required();
  bt->callback([&] {
    qf::TrainsetSpec spec;
    spec.lang = bt_lang;
    spec.negative_corpus = bt_neg;
    spec.cap_per_class = bt_cap;
    spec.heldout_fraction = bt_heldout;
    spec.seed = seed_override.value_or(bt_seed);
    for (const auto& p : bt_pos) {
      auto s = parse_spec(p, "--positive");
      qf::PositiveSource src{s.name, s.path};
      if (!s.fields.empty()) src.fields = s.fields;
      spec.positive_sources.push_back(src);
    }
    fs::create_directories(bt_dir);
    const fs::path dir = bt_dir;
    print_json(qf::build_trainset(spec, {dir / "train.jsonl", dir / "heldout.jsonl", dir / "report.json"}).to_json());
  });

  // train-ngram
  auto* tn = app.add_subcommand("train-ngram", "Train the hashed n-gram classifier");
  std::string tn_train, tn_out, tn_preset, tn_mode;
  std::optional<int> tn_order, tn_min, tn_epochs, tn_dim;
  std::optional<double> tn_lr;
  std::optional<std::uint64_t> tn_buckets;
  std::uint64_t tn_seed = 0;
  bool tn_lower = false;
  tn->add_option("--train", tn_train)->required();
  tn->add_option("--out", tn_out)->required();
  tn->add_option("--preset", tn_preset, "default | chinese");
  tn->add_option("--lang", tn_mode, "Pick the preset from a language code");
  tn->add_option("--ngram-order", tn_order);
  tn->add_option("--min-count", tn_min);
  tn->add_option("--epochs", tn_epochs);
  tn->add_option("--dim", tn_dim);
  tn->add_option("--lr", tn_lr);
  tn->add_option("--buckets", tn_buckets);
  tn->add_option("--seed", tn_seed);
  tn->add_flag("--lowercase", tn_lower);
  tn->callback([&] {
    auto preset = !tn_preset.empty() ? qf::ngram_preset(tn_preset)
                                     : (!tn_mode.empty() ? qf::ngram_preset_for_language(tn_mode)
                                                         : qf::ngram_preset("default"));
    if (tn_order) preset.tokenizer.ngram_order = *tn_order;
    if (tn_min) preset.tokenizer.min_count = *tn_min;
    if (tn_lower) preset.tokenizer.lowercase = true;
    if (tn_epochs) preset.train.epochs = *tn_epochs;
    if (tn_dim) preset.train.dim = *tn_dim;
    if (tn_lr) preset.train.lr = *tn_lr;
    if (tn_buckets) preset.train.bucket_count = *tn_buckets;
    preset.train.seed = seed_override.value_or(tn_seed);
    qf::NgramTrainReport rep;
    const auto model = qf::train_ngram(qf::read_labeled_samples(tn_train), preset.tokenizer, preset.train, &rep);
    model.save(tn_out);
    print_json({{"samples", rep.samples}, {"epoch_loss", rep.epoch_loss}, {"vocab", model.vocab_size()}});
  });

  // train-mlp
  auto* tm = app.add_subcommand("train-mlp", "Train the embedding MLP classifier");
  std::string tm_train, tm_heldout, tm_out;
  std::vector<std::string> tm_emb;
  qf::MlpConfig tm_cfg;
  tm->add_option("--train", tm_train)->required();
  tm->add_option("--heldout", tm_heldout)->required();
  tm->add_option("--embeddings", tm_emb, ".embx files covering train and held-out ids")->required();
  tm->add_option("--out", tm_out)->required();
  tm->add_option("--hidden", tm_cfg.hidden_dim);
  tm->add_option("--epochs", tm_cfg.epochs);
  tm->add_option("--lr", tm_cfg.lr);
  tm->add_option("--dropout", tm_cfg.dropout);
  tm->add_option("--batch-size", tm_cfg.batch_size);
  tm->add_option("--seed", tm_cfg.seed);
  tm->callback([&] {
    if (seed_override) tm_cfg.seed = *seed_override;
    const auto m = load_all(tm_emb);
    tm_cfg.input_dim = m.dim;
    qf::MlpTrainReport rep;
    const auto model =
        qf::train_mlp(qf::read_labeled_samples(tm_train), qf::read_labeled_samples(tm_heldout), m, tm_cfg, &rep);
    model.save(tm_out);
    print_json({{"initial_loss", rep.initial_loss},
                {"final_loss", rep.final_loss},
                {"heldout_loss", rep.heldout_loss},
                {"heldout_accuracy", rep.heldout_accuracy},
                {"steps", rep.steps}});
  });

  // build-refs
  auto* br = app.add_subcommand("build-refs", "Sample and normalise the cosine reference set");
  std::string br_train, br_out;
  std::vector<std::string> br_emb;
  std::size_t br_k = qf::kDefaultReferenceCount;
  std::uint64_t br_seed = 0;
  br->add_option("--train", br_train, "Labelled training set; positives are sampled")->required();
  br->add_option("--embeddings", br_emb)->required();
  br->add_option("--k", br_k);
  br->add_option("--seed", br_seed);
  br->add_option("--out", br_out)->required();
  br->callback([&] {
    const auto m = load_all(br_emb);
    std::vector<std::string> pos;
    for (const auto& s : qf::read_labeled_samples(br_train))
      if (s.label == qf::Label::positive) pos.push_back(s.id);
    qf::EmbeddingMatrix pm;
    pm.dim = m.dim;
    pm.extension = m.extension;
    pm.ids = pos;
    for (auto r : qf::lookup_rows(m, pos)) {
      auto row = m.row(r);
      pm.values.insert(pm.values.end(), row.begin(), row.end());
    }
    const auto refs = qf::build_reference_set(pm, br_k, seed_override.value_or(br_seed));
    refs.save(br_out);
    print_json({{"size", refs.size()}, {"warnings", refs.warnings}});
  });

  // score
  auto* sc = app.add_subcommand("score", "Score a corpus with one scorer");
  std::string sc_scorer, sc_corpus, sc_model, sc_refs, sc_emb, sc_out;
  sc->add_option("--scorer", sc_scorer)->required()->check(CLI::IsMember({"ngram", "mlp", "cosine"}));
  sc->add_option("--corpus", sc_corpus)->required();
  sc->add_option("--model", sc_model);
  sc->add_option("--refs", sc_refs);
  sc->add_option("--embeddings", sc_emb);
  sc->add_option("--out", sc_out)->required();
  sc->callback([&] {
    qf::ScoreTable t;
    if (sc_scorer == "ngram") {
      if (sc_model.empty()) throw qf::ConfigError("--model is required for the ngram scorer");
      t = qf::score_ngram_corpus(qf::NgramModel::load(sc_model), sc_corpus, jobs);
    } else {
      if (sc_emb.empty()) throw qf::ConfigError("--embeddings is required for the " + sc_scorer + " scorer");
      const auto docs = in_corpus_order(qf::read_embeddings(sc_emb), sc_corpus);
      if (sc_scorer == "mlp") {
        if (sc_model.empty()) throw qf::ConfigError("--model is required for the mlp scorer");
        t = qf::score_mlp(qf::MlpModel::load(sc_model), docs, jobs);
      } else {
        if (sc_refs.empty()) throw qf::ConfigError("--refs is required for the cosine scorer");
        t = qf::score_cosine(qf::ReferenceSet::load(sc_refs), docs, jobs).table;
      }
    }
    t.scorer = sc_scorer;
    qf::write_score_table(t, sc_out);
    print_json({{"scorer", sc_scorer}, {"docs", t.entries.size()}});
  });

  // plan
  auto* pl = app.add_subcommand("plan", "Choose the documents to keep");
  std::string pl_scores, pl_out, pl_corpus;
  std::optional<double> pl_p, pl_budget;
  double pl_floor = 0.0;
  bool pl_two_pass = false;
  pl->add_option("--scores", pl_scores)->required();
  auto* p_opt = pl->add_option("--retention", pl_p, "Fraction p in (0, 1]");
  auto* b_opt = pl->add_option("--token-budget", pl_budget, "Target whitespace tokens");
  p_opt->excludes(b_opt);
  pl->add_option("--corpus", pl_corpus, "Corpus the scores cover (needed with --token-budget)");
  pl->add_option("--min-retention", pl_floor, "Lower bound on p when derived from a budget");
  pl->add_flag("--two-pass", pl_two_pass, "Bounded-memory histogram selection");
  pl->add_option("--out", pl_out)->required();
  pl->callback([&] {
    double p = 0.0;
    json extra = json::object();
    if (pl_budget) {
      if (pl_corpus.empty()) throw qf::ConfigError("--corpus is required with --token-budget");
      const auto br = qf::retention_for_budget(qf::scan_manifest({pl_corpus}), *pl_budget, pl_floor);
      p = br.fraction;
      extra = {{"raw", br.raw}, {"percent", br.percent}, {"floored", br.floored}};
    } else if (pl_p) {
      p = *pl_p;
    } else {
      throw qf::ConfigError("one of --retention or --token-budget is required");
    }
    const auto plan =
        pl_two_pass ? qf::plan_selection_two_pass(fs::path(pl_scores), p) : qf::plan_selection(qf::read_score_table(pl_scores), p);
    plan.save(pl_out);
    extra["retention"] = p;
    extra["retained"] = plan.retained.size();
    extra["threshold"] = plan.threshold;
    print_json(extra);
  });

  // filter
  auto* fl = app.add_subcommand("filter", "Write the documents a plan keeps");
  std::string fl_plan, fl_corpus, fl_out;
  fl->add_option("--plan", fl_plan)->required();
  fl->add_option("--corpus", fl_corpus)->required();
  fl->add_option("--out", fl_out)->required();
  fl->callback([&] { print_json(qf::filter_corpus(fl_corpus, qf::SelectionPlan::load(fl_plan), fl_out).to_json()); });

  // mix
  auto* mx = app.add_subcommand("mix", "Mix raw documents back into a filtered corpus");
  std::string mx_f, mx_raw, mx_out;
  double mx_rate = 0.0;
  std::uint64_t mx_seed = 0;
  mx->add_option("--filtered", mx_f)->required();
  mx->add_option("--raw", mx_raw)->required();
  mx->add_option("--rate", mx_rate, "Share of output documents drawn from the raw corpus")->required();
  mx->add_option("--seed", mx_seed);
  mx->add_option("--out", mx_out)->required();
  mx->callback([&] {
    print_json(qf::mix_replay_files(mx_f, mx_raw, mx_rate, seed_override.value_or(mx_seed), mx_out).to_json());
  });

  // decontaminate
  auto* dc = app.add_subcommand("decontaminate", "Remove documents sharing an n-gram with benchmarks");
  std::string dc_corpus, dc_out, dc_index, dc_save, dc_report;
  std::vector<std::string> dc_bench;
  int dc_n = qf::kDefaultGramSize;
  dc->add_option("--corpus", dc_corpus)->required();
  dc->add_option("--benchmark", dc_bench, "name=path[:field,...] benchmark records");
  dc->add_option("--index", dc_index, "Load a saved index instead of building one");
  dc->add_option("--save-index", dc_save);
  dc->add_option("--n", dc_n, "Gram size");
  dc->add_option("--report", dc_report);
  dc->add_option("--out", dc_out)->required();
  dc->callback([&] {
    qf::NgramIndex index;
    if (!dc_index.empty()) {
      index = qf::NgramIndex::load(dc_index);
    } else {
      if (dc_bench.empty()) throw qf::ConfigError("either --index or at least one --benchmark is required");
      std::vector<qf::BenchmarkSource> src;
      for (const auto& b : dc_bench) {
        auto s = parse_spec(b, "--benchmark");
        qf::BenchmarkSource bs{s.name, s.path};
        if (!s.fields.empty()) bs.fields = s.fields;
        src.push_back(bs);
      }
      index = qf::build_index(src, dc_n);
    }
    if (!dc_save.empty()) index.save(dc_save);
    const auto rep = qf::decontaminate_file(dc_corpus, index, dc_out, jobs).to_json();
    if (!dc_report.empty()) write_text(dc_report, rep.dump(2) + "\n");
    print_json(rep);
  });

  // stats
  auto* st = app.add_subcommand("stats", "Length statistics of filtered corpora against a baseline");
  std::string st_base, st_metrics, st_out, st_csv;
  std::vector<std::string> st_runs;
  st->add_option("--baseline", st_base)->required();
  st->add_option("--run", st_runs, "name=path filtered corpus")->required();
  st->add_option("--metrics", st_metrics, "Optional metric table CSV");
  st->add_option("--out", st_out, "JSON report path");
  st->add_option("--csv", st_csv, "Plot-data CSV path");
  st->callback([&] {
    std::vector<qf::FilterRun> runs;
    for (const auto& r : st_runs) {
      auto s = parse_spec(r, "--run");
      runs.push_back({s.name, s.path});
    }
    std::optional<qf::MetricTable> mt;
    if (!st_metrics.empty()) mt = qf::read_metric_table_csv(st_metrics);
    const auto rep = qf::compare_filter_files(st_base, runs, mt);
    if (!st_out.empty()) write_text(st_out, rep.to_json().dump(2) + "\n");
    if (!st_csv.empty()) write_text(st_csv, rep.to_csv());
    print_json(rep.to_json());
  });

  // rank
  auto* rk = app.add_subcommand("rank", "Average rank of approaches over tasks");
  std::string rk_table;
  bool rk_lower = false;
  rk->add_option("--table", rk_table, "CSV: header of approach names, one task per row")->required();
  rk->add_flag("--lower-is-better", rk_lower);
  rk->callback([&] {
    const auto t = qf::read_metric_table_csv(
        rk_table, rk_lower ? qf::Direction::lower_is_better : qf::Direction::higher_is_better);
    const auto r = qf::average_rank(t);
    json j = json::object();
    for (std::size_t a = 0; a < r.size(); ++a) j[t.approaches[a]] = r[a];
    print_json(j);
  });

  // run
  auto* rn = app.add_subcommand("run", "Run a pipeline config");
  std::string rn_config;
  bool rn_dry = false;
  rn->add_option("--config", rn_config)->required();
  rn->add_flag("--dry-run", rn_dry, "Validate and print the stage plan only");
  rn->callback([&] {
    const auto cfg = qf::validate_config(rn_config, seed_override);
    qf::RunOptions opts;
    opts.jobs = jobs;
    opts.dry_run = rn_dry;
    opts.log = &std::cerr;
    const auto man = qf::run_pipeline(cfg, opts);
    print_json(man.to_json());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const qf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const qf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << '\n';
    return kExitStage;
  }
  return 0;
}

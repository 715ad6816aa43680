#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "qf/corpus.hpp"
#include "qf/embedding_store.hpp"
#include "qf/mlp.hpp"
#include "qf/trainset.hpp"

namespace qft {

namespace fs = std::filesystem;

// Fresh empty directory under the system temp dir, unique per process.
fs::path scratch_dir(std::string_view name);

fs::path data_dir();

// "alpha"-marked positives and "beta"-marked negatives over a shared filler
// vocabulary; a linear bag-of-words model separates them perfectly.
std::vector<qf::LabeledSample> separable_samples(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed,
                                                 std::string_view prefix = "s");

// Web-like toy corpus: a minority of short knowledge-style documents and a
// majority of longer boilerplate/spam documents.
std::vector<qf::Document> toy_corpus(std::size_t n, std::uint64_t seed, std::string_view lang = "eng_Latn");

// Knowledge-style records with "question" and "answer" fields.
void write_positive_records(const fs::path& path, std::size_t n, std::uint64_t seed);

// Deterministic stand-in for the external encoder: signed feature hashing
// of whitespace tokens into `dim` slots.
std::vector<float> fake_embed(std::string_view text, std::size_t dim);

inline constexpr std::string_view kFakeModel = "fake-hash-encoder/1";

void embed_corpus(const fs::path& docs, const fs::path& out, std::size_t dim = qf::kDefaultEmbeddingDim,
                  std::string_view model = kFakeModel);

// Plays the external encoder for an embed-handoff request file.
void fulfil_embed_requests(const fs::path& requests, std::string_view model = kFakeModel);

struct ClusterData {
  std::vector<qf::LabeledSample> samples;
  qf::EmbeddingMatrix embeddings;
};

// Two Gaussian clusters around +/- a random direction scaled to `separation`,
// isotropic noise of per-coordinate stddev `noise`. Ids "<prefix>-<i>".
ClusterData gaussian_clusters(std::size_t n_per_class, std::size_t dim, std::uint64_t seed, double separation,
                              double noise, std::string_view prefix = "g");

// Largest relative error between the analytic minibatch gradient and central
// differences (step h) over every parameter, or over `sample` randomly chosen
// parameters when sample > 0. Random inputs, labels and dropout masks.
double mlp_gradient_check(const qf::MlpParams<double>& params, std::size_t batch, double dropout, std::uint64_t seed,
                          std::size_t sample = 0, double h = 1e-5);

// Writes a toy corpus, positive records, a benchmark file and a pipeline
// config covering every stage type into `dir`. Returns the config path.
// The corpus has `n_docs` documents; the config seed is `seed`; the workdir
// is `workdir` (relative paths resolve against `dir`).
fs::path write_toy_pipeline(const fs::path& dir, std::size_t n_docs, std::uint64_t seed,
                            const std::string& workdir = "work");

// Runs the toy pipeline through its embedding handoff: first run stops at
// the handoff, the fake encoder fulfils the requests, second run completes.
void run_toy_pipeline_two_phase(const fs::path& config, std::size_t jobs = 1);

std::string read_file(const fs::path& p);
void write_file(const fs::path& p, const std::string& s);

}  // namespace qft

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qf/corpus.hpp"
#include "qf/hash.hpp"
#include "qf/scores.hpp"
#include "qf/trainset.hpp"

namespace qf {

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
};

enum class TokenMode : std::uint8_t { whitespace = 0, character = 1 };

struct NgramTokenizerConfig {
  TokenMode mode = TokenMode::whitespace;
  int ngram_order = 2;
  int min_count = 1;
  bool lowercase = false;

  void validate() const;
  bool operator==(const NgramTokenizerConfig&) const = default;
};

struct NgramTrainConfig {
  int epochs = 5;
  double lr = 0.1;
  int dim = 100;
  std::uint64_t bucket_count = 2'000'000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NgramPreset {
  NgramTokenizerConfig tokenizer;
  NgramTrainConfig train;
};

// Named presets: "default" (word 2-grams, minCount 1) and "chinese"
// (character 4-grams, minCount 0, 30 epochs, lr 0.1).
NgramPreset ngram_preset(std::string_view name);

// Preset chosen from a language code's script suffix: Han, Kana and Thai
// scripts use character mode, everything else whitespace mode.
NgramPreset ngram_preset_for_language(std::string_view lang);

// Newlines become whitespace, optional lowercasing, then whitespace or
// per-codepoint splitting.
std::vector<std::string> prepare_text(std::string_view text, const NgramTokenizerConfig& cfg);

class NgramModel {
 public:
  NgramModel() = default;

  const NgramTokenizerConfig& tokenizer() const { return tokenizer_; }
  int dim() const { return dim_; }
  std::uint64_t bucket_count() const { return bucket_count_; }
  std::size_t vocab_size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  // -1 when the token is not in the vocabulary.
  std::int64_t word_index(std::string_view token) const;

  // Feature indices: in-vocab unigrams first (token order), then hashed
  // n-grams for orders 2..ngram_order, left to right within each order.
  template <typename Tokens>
  std::vector<std::uint32_t> featurize(const Tokens& tokens) const;

  // P(positive) for a raw text; 0.5 when no feature fires.
  double score_text(std::string_view text) const;
  double score(const Document& doc) const { return score_text(doc.text); }
  // {P(negative), P(positive)}.
  std::array<double, 2> probabilities(std::string_view text) const;

  std::span<const float> input_embeddings() const { return input_; }
  std::span<float> input_embeddings() { return input_; }
  std::span<const float> output_weights() const { return output_; }
  std::span<float> output_weights() { return output_; }

  int train_epochs() const { return epochs_; }
  double train_lr() const { return lr_; }
  std::uint64_t train_seed() const { return seed_; }

  void save(const std::filesystem::path& path) const;
  static NgramModel load(const std::filesystem::path& path);

  // Builds vocabulary and initialises weights without training.
  static NgramModel initialise(const std::vector<std::vector<std::string>>& token_lists,
                               const NgramTokenizerConfig& tok, const NgramTrainConfig& cfg);

  bool operator==(const NgramModel&) const = default;

 private:
  std::vector<float> hidden_for(std::span<const std::uint32_t> features) const;

  NgramTokenizerConfig tokenizer_;
  int dim_ = 0;
  std::uint64_t bucket_count_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>> index_;
  std::vector<float> input_;   // (vocab + buckets) x dim
  std::vector<float> output_;  // 2 x dim, row 0 = negative, row 1 = positive
  int epochs_ = 0;
  double lr_ = 0.0;
  std::uint64_t seed_ = 0;
};

struct NgramTrainReport {
  std::vector<double> epoch_loss;  // mean per-sample loss seen during each epoch
  std::uint64_t samples = 0;
  std::uint64_t empty_feature_samples = 0;
};

// Single-threaded SGD with linear learning-rate decay; deterministic for a
// fixed seed. Throws DataError on single-label input and TrainingError on a
// non-finite loss.
NgramModel train_ngram(const std::vector<LabeledSample>& train, const NgramTokenizerConfig& tok,
                       const NgramTrainConfig& cfg, NgramTrainReport* report = nullptr);

// Scores every document in a corpus file, `jobs` workers per batch, output in
// file order.
ScoreTable score_ngram_corpus(const NgramModel& model, const std::filesystem::path& docs, std::size_t jobs,
                              std::size_t batch_size = 8192);

template <typename Tokens>
std::vector<std::uint32_t> NgramModel::featurize(const Tokens& tokens) const {
  std::vector<std::uint32_t> features;
  const std::size_t n_tokens = std::size(tokens);
  features.reserve(n_tokens * static_cast<std::size_t>(tokenizer_.ngram_order));
  for (const auto& t : tokens) {
    auto it = index_.find(std::string_view(t));
    if (it != index_.end()) features.push_back(it->second);
  }
  if (bucket_count_ == 0 || tokenizer_.ngram_order < 2 || n_tokens < 2) return features;
  const auto base = static_cast<std::uint64_t>(words_.size());
  // running[i] holds the hash of the current-order window starting at i.
  std::vector<std::uint64_t> running;
  running.reserve(n_tokens);
  for (const auto& t : tokens) running.push_back(fnv1a64(std::string_view(t)));
  auto it_begin = std::begin(tokens);
  for (int order = 2; order <= tokenizer_.ngram_order; ++order) {
    const std::size_t n = static_cast<std::size_t>(order);
    if (n > n_tokens) break;
    auto tail = it_begin;
    std::advance(tail, n - 1);
    for (std::size_t i = 0; i + n <= n_tokens; ++i, ++tail) {
      running[i] = fnv1a64(std::string_view(*tail), fnv1a64(kGramSeparator, running[i]));
      features.push_back(static_cast<std::uint32_t>(base + running[i] % bucket_count_));
    }
  }
  return features;
}

namespace ngram_math {

// Loss and gradients of one example under the averaged-embedding linear
// softmax model. d_output receives dL/dW_out (2 x dim); d_hidden receives
// dL/dhidden, so each occurrence of a feature has gradient d_hidden / |features|.
// Shared by training (float) and the float64 gradient check.
template <typename T>
T loss_and_gradient(std::span<const T> input, std::span<const T> output, std::size_t dim,
                    std::span<const std::uint32_t> features, int label, std::span<T> hidden, std::span<T> d_output,
                    std::span<T> d_hidden) {
  std::fill(hidden.begin(), hidden.end(), T(0));
  for (std::uint32_t f : features) {
    const T* row = input.data() + static_cast<std::size_t>(f) * dim;
    for (std::size_t j = 0; j < dim; ++j) hidden[j] += row[j];
  }
  if (!features.empty()) {
    const T inv = T(1) / static_cast<T>(features.size());
    for (std::size_t j = 0; j < dim; ++j) hidden[j] *= inv;
  }
  T logits[2] = {T(0), T(0)};
  for (int k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < dim; ++j) logits[k] += output[k * dim + j] * hidden[j];
  const T m = std::max(logits[0], logits[1]);
  const T e0 = std::exp(logits[0] - m);
  const T e1 = std::exp(logits[1] - m);
  const T z = e0 + e1;
  const T p[2] = {e0 / z, e1 / z};
  const T loss = -(logits[label] - m - std::log(z));

  std::fill(d_hidden.begin(), d_hidden.end(), T(0));
  for (int k = 0; k < 2; ++k) {
    const T g = p[k] - (k == label ? T(1) : T(0));
    for (std::size_t j = 0; j < dim; ++j) {
      d_output[k * dim + j] = g * hidden[j];
      d_hidden[j] += g * output[k * dim + j];
    }
  }
  return loss;
}

}  // namespace ngram_math

}  // namespace qf

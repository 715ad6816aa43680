#include "qf/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qf/binio.hpp"
#include "qf/error.hpp"
#include "qf/parallel.hpp"
#include "qf/rng.hpp"
#include "qf/unicode.hpp"

namespace qf {

namespace {

constexpr std::string_view kModelMagic = "NGQF1";

std::string_view script_of(std::string_view lang) {
  const auto us = lang.rfind('_');
  return us == std::string_view::npos ? std::string_view{} : lang.substr(us + 1);
}

std::string replace_newlines(std::string_view text) {
  std::string s(text);
  std::replace_if(s.begin(), s.end(), [](char c) { return c == '\n' || c == '\r'; }, ' ');
  return s;
}

std::vector<std::string_view> split_for(std::string_view text, TokenMode mode) {
  return mode == TokenMode::character ? unicode::split_codepoints(text) : unicode::split_whitespace(text);
}

}  // namespace

void NgramTokenizerConfig::validate() const {
  if (ngram_order < 1 || ngram_order > 8) throw ConfigError("ngram_order must be in [1, 8]");
  if (min_count < 0) throw ConfigError("min_count must be >= 0");
}

void NgramTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (dim < 1) throw ConfigError("dim must be >= 1");
}

NgramPreset ngram_preset(std::string_view name) {
  NgramPreset p;
  if (name == "default") return p;
  if (name == "chinese") {
    p.tokenizer.mode = TokenMode::character;
    p.tokenizer.ngram_order = 4;
    p.tokenizer.min_count = 0;
    p.train.epochs = 30;
    p.train.lr = 0.1;
    return p;
  }
  throw ConfigError("unknown n-gram preset '" + std::string(name) + "'");
}

NgramPreset ngram_preset_for_language(std::string_view lang) {
  const auto script = script_of(lang);
  if (script == "Hans" || script == "Hant" || script == "Hani") return ngram_preset("chinese");
  NgramPreset p = ngram_preset("default");
  if (script == "Jpan" || script == "Kana" || script == "Hira" || script == "Thai") {
    p.tokenizer.mode = TokenMode::character;
    p.tokenizer.ngram_order = 4;
  }
  return p;
}

std::vector<std::string> prepare_text(std::string_view text, const NgramTokenizerConfig& cfg) {
  std::string s = replace_newlines(text);
  if (cfg.lowercase) s = unicode::to_lower(s);
  std::vector<std::string> out;
  for (auto v : split_for(s, cfg.mode)) out.emplace_back(v);
  return out;
}

std::int64_t NgramModel::word_index(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::vector<float> NgramModel::hidden_for(std::span<const std::uint32_t> features) const {
  std::vector<float> hidden(static_cast<std::size_t>(dim_), 0.0f);
  const auto d = static_cast<std::size_t>(dim_);
  for (std::uint32_t f : features) {
    const float* row = input_.data() + static_cast<std::size_t>(f) * d;
    for (std::size_t j = 0; j < d; ++j) hidden[j] += row[j];
  }
  if (!features.empty()) {
    const float inv = 1.0f / static_cast<float>(features.size());
    for (auto& h : hidden) h *= inv;
  }
  return hidden;
}

std::array<double, 2> NgramModel::probabilities(std::string_view text) const {
  std::vector<std::uint32_t> features;
  if (tokenizer_.lowercase) {
    features = featurize(prepare_text(text, tokenizer_));
  } else {
    // Newlines are already whitespace for both split modes.
    features = featurize(split_for(text, tokenizer_.mode));
  }
  const auto hidden = hidden_for(features);
  const auto d = static_cast<std::size_t>(dim_);
  double logits[2] = {0.0, 0.0};
  for (int k = 0; k < 2; ++k) {
    float acc = 0.0f;
    for (std::size_t j = 0; j < d; ++j) acc += output_[k * d + j] * hidden[j];
    logits[k] = acc;
  }
  const double p_pos = 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
  return {1.0 - p_pos, p_pos};
}

double NgramModel::score_text(std::string_view text) const { return probabilities(text)[1]; }

NgramModel NgramModel::initialise(const std::vector<std::vector<std::string>>& token_lists,
                                  const NgramTokenizerConfig& tok, const NgramTrainConfig& cfg) {
  tok.validate();
  cfg.validate();
  std::unordered_map<std::string, std::uint64_t, StringHash, std::equal_to<>> counts;
  for (const auto& tokens : token_lists)
    for (const auto& t : tokens) ++counts[t];
  const std::uint64_t threshold = static_cast<std::uint64_t>(std::max(tok.min_count, 1));
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (auto& [w, c] : counts)
    if (c >= threshold) kept.emplace_back(w, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  NgramModel m;
  m.tokenizer_ = tok;
  m.dim_ = cfg.dim;
  m.bucket_count_ = tok.ngram_order >= 2 ? cfg.bucket_count : 0;
  const std::uint64_t rows = kept.size() + m.bucket_count_;
  if (rows >= std::numeric_limits<std::uint32_t>::max()) throw ConfigError("vocabulary + buckets exceed 2^32 rows");
  m.words_.reserve(kept.size());
  for (auto& [w, _] : kept) {
    m.index_.emplace(w, static_cast<std::uint32_t>(m.words_.size()));
    m.words_.push_back(std::move(w));
  }
  m.input_.resize(rows * static_cast<std::uint64_t>(cfg.dim));
  Rng rng(cfg.seed);
  const double bound = 1.0 / cfg.dim;
  for (auto& v : m.input_) v = static_cast<float>(rng.uniform(-bound, bound));
  m.output_.assign(2 * static_cast<std::size_t>(cfg.dim), 0.0f);
  m.epochs_ = cfg.epochs;
  m.lr_ = cfg.lr;
  m.seed_ = cfg.seed;
  return m;
}

NgramModel train_ngram(const std::vector<LabeledSample>& train, const NgramTokenizerConfig& tok,
                       const NgramTrainConfig& cfg, NgramTrainReport* report) {
  bool has[2] = {false, false};
  for (const auto& s : train) has[static_cast<int>(s.label)] = true;
  if (!has[0] || !has[1]) throw DataError("n-gram training needs both positive and negative samples");

  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(train.size());
  for (const auto& s : train) tokens.push_back(prepare_text(s.text, tok));
  NgramModel model = NgramModel::initialise(tokens, tok, cfg);

  std::vector<std::vector<std::uint32_t>> features;
  features.reserve(train.size());
  NgramTrainReport local;
  for (const auto& t : tokens) {
    features.push_back(model.featurize(t));
    if (features.back().empty()) ++local.empty_feature_samples;
  }
  tokens.clear();

  const auto dim = static_cast<std::size_t>(cfg.dim);
  std::vector<float> hidden(dim), d_output(2 * dim), d_hidden(dim);
  auto input = model.input_embeddings();
  auto output = model.output_weights();
  const double total = static_cast<double>(cfg.epochs) * static_cast<double>(train.size());
  std::uint64_t processed = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed ^ 0x5eedf00dULL);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const auto& feats = features[idx];
      const int label = static_cast<int>(train[idx].label);
      const float lr = static_cast<float>(cfg.lr * (1.0 - static_cast<double>(processed) / total));
      ++processed;
      const float loss = ngram_math::loss_and_gradient<float>(input, output, dim, feats, label, hidden, d_output,
                                                              d_hidden);
      loss_sum += loss;
      for (std::size_t i = 0; i < 2 * dim; ++i) output[i] -= lr * d_output[i];
      if (feats.empty()) continue;
      const float scale = lr / static_cast<float>(feats.size());
      for (std::uint32_t f : feats) {
        float* row = input.data() + static_cast<std::size_t>(f) * dim;
        for (std::size_t j = 0; j < dim; ++j) row[j] -= scale * d_hidden[j];
      }
    }
    const double mean = loss_sum / static_cast<double>(train.size());
    if (!std::isfinite(mean)) throw TrainingError("non-finite training loss in epoch " + std::to_string(epoch + 1));
    local.epoch_loss.push_back(mean);
  }
  local.samples = train.size();
  if (report) *report = std::move(local);
  return model;
}

void NgramModel::save(const std::filesystem::path& path) const {
  BinaryWriter w(path);
  w.bytes(kModelMagic.data(), kModelMagic.size());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(tokenizer_.mode));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tokenizer_.ngram_order));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tokenizer_.min_count));
  w.put<std::uint8_t>(tokenizer_.lowercase ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim_));
  w.put<std::uint64_t>(bucket_count_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(epochs_));
  w.put<double>(lr_);
  w.put<std::uint64_t>(seed_);
  w.put<std::uint64_t>(words_.size());
  for (const auto& word : words_) w.put_string(word);
  w.put_array<float>(input_);
  w.put_array<float>(output_);
  w.close();
}

NgramModel NgramModel::load(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic(kModelMagic);
  NgramModel m;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw DataError(path.string() + ": unknown token mode");
  m.tokenizer_.mode = static_cast<TokenMode>(mode);
  m.tokenizer_.ngram_order = static_cast<int>(r.get<std::uint32_t>());
  m.tokenizer_.min_count = static_cast<int>(r.get<std::uint32_t>());
  m.tokenizer_.lowercase = r.get<std::uint8_t>() != 0;
  m.dim_ = static_cast<int>(r.get<std::uint32_t>());
  m.bucket_count_ = r.get<std::uint64_t>();
  m.epochs_ = static_cast<int>(r.get<std::uint32_t>());
  m.lr_ = r.get<double>();
  m.seed_ = r.get<std::uint64_t>();
  try {
    m.tokenizer_.validate();
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (m.dim_ < 1 || m.dim_ > 1 << 16) throw DataError(path.string() + ": bad dimension");
  const auto vocab = r.get<std::uint64_t>();
  if (vocab + m.bucket_count_ >= std::numeric_limits<std::uint32_t>::max())
    throw DataError(path.string() + ": vocabulary size out of range");
  m.words_.reserve(vocab);
  for (std::uint64_t i = 0; i < vocab; ++i) {
    m.words_.push_back(r.get_string());
    if (!m.index_.emplace(m.words_.back(), static_cast<std::uint32_t>(i)).second)
      throw DataError(path.string() + ": duplicate vocabulary entry");
  }
  m.input_.resize((vocab + m.bucket_count_) * static_cast<std::uint64_t>(m.dim_));
  r.get_array<float>(m.input_);
  m.output_.resize(2 * static_cast<std::size_t>(m.dim_));
  r.get_array<float>(m.output_);
  if (!r.at_eof()) throw DataError(path.string() + ": trailing bytes after model payload");
  for (float v : m.input_)
    if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite weight");
  for (float v : m.output_)
    if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite weight");
  return m;
}

ScoreTable score_ngram_corpus(const NgramModel& model, const std::filesystem::path& docs, std::size_t jobs,
                              std::size_t batch_size) {
  ScoreTable table;
  table.scorer = "ngram";
  DocumentReader reader(docs);
  std::vector<Document> batch;
  std::vector<double> scores;
  batch.reserve(batch_size);
  auto flush = [&] {
    scores.assign(batch.size(), 0.0);
    parallel_for(batch.size(), jobs, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) scores[i] = model.score(batch[i]);
    });
    for (std::size_t i = 0; i < batch.size(); ++i) table.entries.push_back({std::move(batch[i].id), scores[i]});
    batch.clear();
  };
  Document d;
  while (reader.next(d)) {
    batch.push_back(std::move(d));
    if (batch.size() == batch_size) flush();
  }
  flush();
  return table;
}

}  // namespace qf

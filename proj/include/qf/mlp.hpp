#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qf/embedding_store.hpp"
#include "qf/rng.hpp"
#include "qf/scores.hpp"
#include "qf/trainset.hpp"

namespace qf {

// Hyperparameters of the embedding classifier. Defaults: hidden 256, ReLU,
// dropout 0.2, sigmoid output, 6 epochs of AdamW at a constant 3e-4. Betas,
// epsilon, weight decay and batch size are not given by the method and are
// fixed here; they are recorded in the model file.
struct MlpConfig {
  std::size_t input_dim = kDefaultEmbeddingDim;
  std::size_t hidden_dim = 256;
  int epochs = 6;
  double lr = 3e-4;
  double dropout = 0.2;
  std::size_t batch_size = 256;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename T>
struct MlpParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<T> w1;  // hidden x input, row major
  std::vector<T> b1;  // hidden
  std::vector<T> w2;  // hidden (single output unit)
  std::vector<T> b2;  // 1

  MlpParams() = default;
  MlpParams(std::size_t in, std::size_t hidden)
      : input_dim(in), hidden_dim(hidden), w1(in * hidden), b1(hidden), w2(hidden), b2(1) {}

  std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

  // Flat views in the fixed order w1, b1, w2, b2.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(std::span<T>(w1));
    fn(std::span<T>(b1));
    fn(std::span<T>(w2));
    fn(std::span<T>(b2));
  }

  template <typename U>
  MlpParams<U> cast() const {
    MlpParams<U> out(input_dim, hidden_dim);
    std::copy(w1.begin(), w1.end(), out.w1.begin());
    std::copy(b1.begin(), b1.end(), out.b1.begin());
    std::copy(w2.begin(), w2.end(), out.w2.begin());
    std::copy(b2.begin(), b2.end(), out.b2.begin());
    return out;
  }

  bool operator==(const MlpParams&) const = default;
};

enum class ForwardMode { infer, train };

class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(MlpParams<float> params, MlpConfig meta) : params_(std::move(params)), meta_(meta) {}

  // Seeded fan-in uniform init: every tensor ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static MlpModel initialise(const MlpConfig& cfg);

  const MlpParams<float>& params() const { return params_; }
  MlpParams<float>& params() { return params_; }
  const MlpConfig& meta() const { return meta_; }

  void save(const std::filesystem::path& path) const;
  static MlpModel load(const std::filesystem::path& path);

  bool operator==(const MlpModel& o) const { return params_ == o.params_; }

 private:
  MlpParams<float> params_;
  MlpConfig meta_;
};

// sigmoid(w2 . dropout(relu(W1 x + b1)) + b2). Inference applies no dropout;
// train mode draws an inverted-dropout mask (kept units scaled by 1/(1-p))
// from `mask_rng`. Throws DataError on wrong size or non-finite input.
double mlp_forward(const MlpModel& model, std::span<const float> x);
double mlp_forward(const MlpModel& model, std::span<const float> x, ForwardMode mode, Rng* mask_rng);

struct MlpTrainReport {
  double initial_loss = 0.0;  // full-pass training BCE before the first update
  double final_loss = 0.0;    // full-pass training BCE after the last epoch
  std::vector<double> epoch_loss;  // mean minibatch loss (dropout active)
  double heldout_loss = 0.0;
  double heldout_accuracy = 0.0;
  std::size_t steps = 0;
};

// Deterministic minibatch AdamW training on (embedding row, label) pairs.
// Throws DataError naming a sample without an embedding and TrainingError on
// a non-finite loss.
MlpModel train_mlp(const std::vector<LabeledSample>& train, const std::vector<LabeledSample>& heldout,
                   const EmbeddingMatrix& embeddings, const MlpConfig& cfg, MlpTrainReport* report = nullptr);

ScoreTable score_mlp(const MlpModel& model, const EmbeddingMatrix& matrix, std::size_t jobs = 1);

namespace mlp_math {

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// Binary cross-entropy on a logit, numerically stable.
template <typename T>
T bce_with_logit(T z, T y) {
  return std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
}

// Forward pass for one example. `keep` (nullable) is the dropout mask and
// `keep_scale` the inverted-dropout factor. Fills pre/act (hidden sized) and
// returns the output logit.
template <typename T, typename X>
T forward(const MlpParams<T>& p, const X* x, const std::uint8_t* keep, T keep_scale, T* pre, T* act) {
  const std::size_t in = p.input_dim;
  T z = p.b2[0];
  for (std::size_t h = 0; h < p.hidden_dim; ++h) {
    const T* w = p.w1.data() + h * in;
    T s = p.b1[h];
    for (std::size_t i = 0; i < in; ++i) s += w[i] * static_cast<T>(x[i]);
    pre[h] = s;
    T a = s > T(0) ? s : T(0);
    if (keep) a = keep[h] ? a * keep_scale : T(0);
    act[h] = a;
    z += p.w2[h] * a;
  }
  return z;
}

// Mean BCE over a minibatch and its gradient w.r.t. every parameter. `rows`
// point at input vectors, `keep_masks` is batch x hidden (empty = no dropout).
// `grad` must be shaped like `p`; it is overwritten.
template <typename T, typename X>
T batch_loss_and_gradient(const MlpParams<T>& p, std::span<const X* const> rows, std::span<const T> labels,
                          std::span<const std::uint8_t> keep_masks, T keep_scale, MlpParams<T>& grad) {
  const std::size_t hidden = p.hidden_dim;
  const std::size_t in = p.input_dim;
  grad.for_each_tensor([](std::span<T> t) { std::fill(t.begin(), t.end(), T(0)); });
  std::vector<T> pre(hidden), act(hidden);
  const T inv_b = T(1) / static_cast<T>(rows.size());
  T loss = T(0);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const std::uint8_t* keep = keep_masks.empty() ? nullptr : keep_masks.data() + b * hidden;
    const X* x = rows[b];
    const T z = forward(p, x, keep, keep_scale, pre.data(), act.data());
    loss += bce_with_logit(z, labels[b]);
    const T dz = (sigmoid(z) - labels[b]) * inv_b;
    grad.b2[0] += dz;
    for (std::size_t h = 0; h < hidden; ++h) {
      grad.w2[h] += dz * act[h];
      if (pre[h] <= T(0)) continue;
      if (keep && !keep[h]) continue;
      const T dpre = dz * p.w2[h] * (keep ? keep_scale : T(1));
      grad.b1[h] += dpre;
      T* g = grad.w1.data() + h * in;
      for (std::size_t i = 0; i < in; ++i) g[i] += dpre * static_cast<T>(x[i]);
    }
  }
  return loss * inv_b;
}

}  // namespace mlp_math

}  // namespace qf

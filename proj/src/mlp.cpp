#include "qf/mlp.hpp"

#include <numeric>

#include <json.hpp>

#include "qf/binio.hpp"
#include "qf/error.hpp"
#include "qf/parallel.hpp"

namespace qf {

namespace {

constexpr std::string_view kMlpMagic = "MLPQ1";
constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kMaskStream = 0xd1b54a32d192ed03ULL;

nlohmann::json meta_json(const MlpConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden_dim", c.hidden_dim}, {"epochs", c.epochs},
          {"lr", c.lr},               {"dropout", c.dropout},       {"batch_size", c.batch_size},
          {"beta1", c.beta1},         {"beta2", c.beta2},           {"eps", c.eps},
          {"weight_decay", c.weight_decay}, {"seed", c.seed},       {"init", "uniform_fan_in"},
          {"optimizer", "adamw"},     {"loss", "bce"}};
}

MlpConfig meta_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void check_input(const MlpModel& model, std::span<const float> x) {
  if (x.size() != model.params().input_dim)
    throw DataError("MLP input has dimension " + std::to_string(x.size()) + ", expected " +
                    std::to_string(model.params().input_dim));
  for (float v : x)
    if (!std::isfinite(v)) throw DataError("non-finite MLP input");
}

struct AdamState {
  MlpParams<float> m, v;
  std::size_t t = 0;
};

void adamw_step(MlpParams<float>& p, const MlpParams<float>& g, AdamState& s, const MlpConfig& c) {
  ++s.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
  auto update = [&](std::vector<float>& param, const std::vector<float>& grad, std::vector<float>& m,
                    std::vector<float>& v) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      double w = param[i];
      w -= c.lr * c.weight_decay * w;
      const double gi = grad[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      w -= c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      param[i] = static_cast<float>(w);
    }
  };
  update(p.w1, g.w1, s.m.w1, s.v.w1);
  update(p.b1, g.b1, s.m.b1, s.v.b1);
  update(p.w2, g.w2, s.m.w2, s.v.w2);
  update(p.b2, g.b2, s.m.b2, s.v.b2);
}

// Full-pass inference-mode BCE and accuracy in float64.
std::pair<double, double> evaluate(const MlpParams<float>& p, const std::vector<const float*>& rows,
                                   const std::vector<float>& labels) {
  if (rows.empty()) return {0.0, 0.0};
  std::vector<float> pre(p.hidden_dim), act(p.hidden_dim);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double z = mlp_math::forward<float, float>(p, rows[i], nullptr, 1.0f, pre.data(), act.data());
    loss += mlp_math::bce_with_logit<double>(z, labels[i]);
    if ((z > 0.0) == (labels[i] > 0.5f)) ++correct;
  }
  const double n = static_cast<double>(rows.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

void MlpConfig::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw ConfigError("MLP dimensions must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
  if (!(eps > 0.0) || !(weight_decay >= 0.0)) throw ConfigError("eps must be > 0 and weight_decay >= 0");
}

MlpModel MlpModel::initialise(const MlpConfig& cfg) {
  cfg.validate();
  MlpParams<float> p(cfg.input_dim, cfg.hidden_dim);
  Rng rng(cfg.seed);
  const double b_in = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  const double b_hid = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  for (auto& w : p.w1) w = static_cast<float>(rng.uniform(-b_in, b_in));
  for (auto& w : p.b1) w = static_cast<float>(rng.uniform(-b_in, b_in));
  for (auto& w : p.w2) w = static_cast<float>(rng.uniform(-b_hid, b_hid));
  for (auto& w : p.b2) w = static_cast<float>(rng.uniform(-b_hid, b_hid));
  return MlpModel(std::move(p), cfg);
}

double mlp_forward(const MlpModel& model, std::span<const float> x) {
  return mlp_forward(model, x, ForwardMode::infer, nullptr);
}

double mlp_forward(const MlpModel& model, std::span<const float> x, ForwardMode mode, Rng* mask_rng) {
  check_input(model, x);
  const auto& p = model.params();
  std::vector<float> pre(p.hidden_dim), act(p.hidden_dim);
  std::vector<std::uint8_t> keep;
  float scale = 1.0f;
  if (mode == ForwardMode::train && model.meta().dropout > 0.0) {
    if (!mask_rng) throw std::invalid_argument("train-mode forward needs a mask generator");
    keep.resize(p.hidden_dim);
    for (auto& k : keep) k = mask_rng->uniform() >= model.meta().dropout ? 1 : 0;
    scale = static_cast<float>(1.0 / (1.0 - model.meta().dropout));
  }
  const float z =
      mlp_math::forward<float, float>(p, x.data(), keep.empty() ? nullptr : keep.data(), scale, pre.data(), act.data());
  return mlp_math::sigmoid<double>(z);
}

MlpModel train_mlp(const std::vector<LabeledSample>& train, const std::vector<LabeledSample>& heldout,
                   const EmbeddingMatrix& embeddings, const MlpConfig& cfg_in, MlpTrainReport* report) {
  MlpConfig cfg = cfg_in;
  cfg.input_dim = embeddings.dim;
  cfg.validate();
  bool has[2] = {false, false};
  for (const auto& s : train) has[static_cast<int>(s.label)] = true;
  if (!has[0] || !has[1]) throw DataError("MLP training needs both positive and negative samples");

  auto gather = [&](const std::vector<LabeledSample>& samples, std::vector<const float*>& rows,
                    std::vector<float>& labels) {
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.id);
    for (std::size_t r : lookup_rows(embeddings, ids)) rows.push_back(embeddings.row(r).data());
    for (const auto& s : samples) labels.push_back(s.label == Label::positive ? 1.0f : 0.0f);
  };
  std::vector<const float*> rows, held_rows;
  std::vector<float> labels, held_labels;
  gather(train, rows, labels);
  gather(heldout, held_rows, held_labels);

  MlpModel model = MlpModel::initialise(cfg);
  MlpParams<float>& p = model.params();
  MlpParams<float> grad(cfg.input_dim, cfg.hidden_dim);
  AdamState adam{MlpParams<float>(cfg.input_dim, cfg.hidden_dim), MlpParams<float>(cfg.input_dim, cfg.hidden_dim), 0};

  MlpTrainReport rep;
  rep.initial_loss = evaluate(p, rows, labels).first;

  Rng shuffle_rng(cfg.seed ^ kShuffleStream);
  Rng mask_rng(cfg.seed ^ kMaskStream);
  const float keep_scale = static_cast<float>(1.0 / (1.0 - cfg.dropout));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const float*> batch_rows;
  std::vector<float> batch_labels;
  std::vector<std::uint8_t> masks;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_rows.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_rows.push_back(rows[order[i]]);
        batch_labels.push_back(labels[order[i]]);
      }
      masks.clear();
      if (cfg.dropout > 0.0) {
        masks.resize(batch_rows.size() * cfg.hidden_dim);
        for (auto& k : masks) k = mask_rng.uniform() >= cfg.dropout ? 1 : 0;
      }
      const float loss = mlp_math::batch_loss_and_gradient<float, float>(
          p, batch_rows, batch_labels, masks, cfg.dropout > 0.0 ? keep_scale : 1.0f, grad);
      if (!std::isfinite(loss)) throw TrainingError("non-finite MLP loss in epoch " + std::to_string(epoch + 1));
      adamw_step(p, grad, adam, cfg);
      loss_sum += loss;
      ++batches;
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  rep.steps = adam.t;
  rep.final_loss = evaluate(p, rows, labels).first;
  if (!std::isfinite(rep.final_loss)) throw TrainingError("non-finite MLP loss after training");
  std::tie(rep.heldout_loss, rep.heldout_accuracy) = evaluate(p, held_rows, held_labels);
  if (report) *report = std::move(rep);
  return model;
}

ScoreTable score_mlp(const MlpModel& model, const EmbeddingMatrix& matrix, std::size_t jobs) {
  if (matrix.dim != model.params().input_dim)
    throw DataError("embedding dimension " + std::to_string(matrix.dim) + " does not match MLP input " +
                    std::to_string(model.params().input_dim));
  ScoreTable t;
  t.scorer = "mlp";
  std::vector<double> scores(matrix.rows());
  parallel_for(matrix.rows(), jobs, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) scores[i] = mlp_forward(model, matrix.row(i));
  });
  t.entries.reserve(matrix.rows());
  for (std::size_t i = 0; i < matrix.rows(); ++i) t.entries.push_back({matrix.ids[i], scores[i]});
  return t;
}

void MlpModel::save(const std::filesystem::path& path) const {
  BinaryWriter w(path);
  w.bytes(kMlpMagic.data(), kMlpMagic.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params_.input_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params_.hidden_dim));
  w.put_string(meta_json(meta_).dump());
  w.put_array<float>(params_.w1);
  w.put_array<float>(params_.b1);
  w.put_array<float>(params_.w2);
  w.put_array<float>(params_.b2);
  w.close();
}

MlpModel MlpModel::load(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic(kMlpMagic);
  const auto in = r.get<std::uint32_t>();
  const auto hidden = r.get<std::uint32_t>();
  if (in == 0 || hidden == 0 || in > (1u << 20) || hidden > (1u << 20))
    throw DataError(path.string() + ": bad MLP shape");
  MlpConfig meta;
  try {
    meta = meta_from_json(nlohmann::json::parse(r.get_string(1u << 20)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad MLP metadata: " + e.what());
  }
  MlpParams<float> p(in, hidden);
  r.get_array<float>(p.w1);
  r.get_array<float>(p.b1);
  r.get_array<float>(p.w2);
  r.get_array<float>(p.b2);
  if (!r.at_eof()) throw DataError(path.string() + ": trailing bytes after MLP payload");
  p.for_each_tensor([&](std::span<float> t) {
    for (float v : t)
      if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite MLP weight");
  });
  return MlpModel(std::move(p), meta);
}

}  // namespace qf

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacecast/common.hpp"
#include "pacecast/evalcal.hpp"
#include "pacecast/grammar.hpp"
#include "pacecast/model.hpp"
#include "pacecast/soft_targets.hpp"

namespace pacecast {

enum class CheckpointSelect { best_median_mae, best_ks };

inline const char* to_string(CheckpointSelect s) {
  return s == CheckpointSelect::best_median_mae ? "best_median_mae" : "best_ks";
}

inline CheckpointSelect select_from_string(const std::string& s) {
  if (s == "best_median_mae") return CheckpointSelect::best_median_mae;
  if (s == "best_ks") return CheckpointSelect::best_ks;
  throw ConfigError("unknown checkpoint selection '" + s + "'");
}

struct TrainConfig {
  int batch_size = 64;
  double base_lr = 1e-4;
  double weight_decay = 0.00118;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_steps = 1000;
  int eval_interval = 100;
  int val_max_examples = 512;
  double grad_clip = 0.0;  // 0 disables
  CheckpointSelect select = CheckpointSelect::best_median_mae;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("TrainConfig: base_lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
    if (max_steps < 0) throw ConfigError("TrainConfig: max_steps must be >= 0");
    if (eval_interval < 0) throw ConfigError("TrainConfig: eval_interval must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("TrainConfig: grad_clip must be >= 0");
  }
};

// Decoupled weight decay: theta <- theta*(1 - lr*wd) - lr*mhat/(sqrt(vhat)+eps).
template <typename S>
class AdamW {
 public:
  void step(std::vector<NamedTensor<S>*> params, double lr, double wd, double beta1, double beta2,
            double eps, double grad_clip = 0.0) {
    if (m_.empty()) {
      for (auto* t : params) {
        m_.emplace_back(t->size(), S(0));
        v_.emplace_back(t->size(), S(0));
      }
    }
    ++t_;
    double clip_scale = 1.0;
    if (grad_clip > 0.0) {
      double norm_sq = 0.0;
      for (auto* t : params)
        for (S g : t->grad) norm_sq += static_cast<double>(g) * static_cast<double>(g);
      const double norm = std::sqrt(norm_sq);
      if (norm > grad_clip) clip_scale = grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    const S decay = static_cast<S>(1.0 - lr * wd);
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
      auto* t = params[ti];
      auto& m = m_[ti];
      auto& v = v_[ti];
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double g = static_cast<double>(t->grad[i]) * clip_scale;
        m[i] = static_cast<S>(beta1 * m[i] + (1.0 - beta1) * g);
        v[i] = static_cast<S>(beta2 * v[i] + (1.0 - beta2) * g * g);
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        t->value[i] = t->value[i] * decay - static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  std::vector<std::vector<S>> m_, v_;
  int t_ = 0;
};

// ----------------------------- window -> model input -----------------------------

// Trims the PAD tail for training efficiency; PAD-invariance of the forward
// pass makes this equivalent to processing the full capacity.
inline WindowInput window_to_input(const EncodedWindow& w, const Vocabulary& vocab,
                                   const ModelConfig& cfg, bool trim = true) {
  WindowInput in;
  const int len = trim ? w.n_real : static_cast<int>(w.ids.size());
  in.ids.assign(w.ids.begin(), w.ids.begin() + len);
  in.predict_pos = w.predict_pos;
  if (cfg.input_embedding == InputEmbedding::soft_gaussian) {
    for (const auto& slot : w.continuous_slots) {
      if (slot.pos >= len) continue;
      const auto& f = vocab.features()[static_cast<std::size_t>(slot.feature)];
      const auto weights =
          soft_embed_weights(slot.value, f.bins, cfg.soft_embed_sigma_floor, cfg.soft_embed_k);
      InputMix mix;
      mix.first_id = vocab.range(f.name).begin;
      mix.weights.assign(weights.begin(), weights.end());
      in.soft.emplace_back(slot.pos, std::move(mix));
    }
  }
  return in;
}

// Mean loss over a batch, with gradients accumulated at scale 1/B. Dropout
// applies only when a generator is passed.
template <typename S>
double batch_loss_and_grad(Transformer<S>& model, std::span<const WindowInput> inputs,
                           std::span<const SoftTarget> targets, Rng* dropout_rng = nullptr,
                           bool accumulate_grad = true) {
  if (inputs.size() != targets.size())
    throw std::invalid_argument("batch_loss_and_grad: inputs/targets mismatch");
  if (inputs.empty()) throw std::invalid_argument("batch_loss_and_grad: empty batch");
  const double inv_b = 1.0 / static_cast<double>(inputs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto logits = model.forward(inputs[i], dropout_rng != nullptr, dropout_rng);
    std::vector<double> dlog(logits.size());
    {
      std::vector<double> ld(logits.begin(), logits.end());
      auto [loss, dlogits] = loss_and_dlogits(ld, targets[i]);
      total += loss;
      if (!accumulate_grad) continue;
      dlog = std::move(dlogits);
    }
    std::vector<S> dl(dlog.size());
    for (std::size_t j = 0; j < dlog.size(); ++j) dl[j] = static_cast<S>(dlog[j] * inv_b);
    model.backward(dl);
  }
  if (accumulate_grad) model.check_gradients_finite();
  return total * inv_b;
}

// ----------------------------- checkpoints -----------------------------

inline constexpr char kCheckpointMagic[8] = {'P', 'C', 'C', 'K', 'P', 'T', '1', '\n'};
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"n_layers", cfg.n_layers},
                        {"n_heads", cfg.n_heads},
                        {"d_model", cfg.d_model},
                        {"d_ff", cfg.d_ff},
                        {"dropout", cfg.dropout},
                        {"window_capacity", cfg.window_capacity},
                        {"vocab_size", cfg.vocab_size},
                        {"pace_bin_count", cfg.pace_bin_count},
                        {"input_embedding", to_string(cfg.input_embedding)},
                        {"soft_embed_sigma_floor", cfg.soft_embed_sigma_floor},
                        {"soft_embed_k", cfg.soft_embed_k}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.window_capacity = j.at("window_capacity").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.pace_bin_count = j.at("pace_bin_count").get<int>();
  cfg.input_embedding = input_embedding_from_string(j.at("input_embedding").get<std::string>());
  cfg.soft_embed_sigma_floor = j.at("soft_embed_sigma_floor").get<double>();
  cfg.soft_embed_k = j.at("soft_embed_k").get<double>();
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"batch_size", cfg.batch_size},
                        {"base_lr", cfg.base_lr},
                        {"weight_decay", cfg.weight_decay},
                        {"beta1", cfg.beta1},
                        {"beta2", cfg.beta2},
                        {"adam_eps", cfg.adam_eps},
                        {"max_steps", cfg.max_steps},
                        {"eval_interval", cfg.eval_interval},
                        {"val_max_examples", cfg.val_max_examples},
                        {"grad_clip", cfg.grad_clip},
                        {"select", to_string(cfg.select)},
                        {"seed", cfg.seed}};
}

struct CheckpointSelection {
  std::string mode;  // best_median_mae | best_ks | final
  int step = 0;
  double metric = 0.0;
};

struct Checkpoint {
  ModelConfig model_config;
  nlohmann::json train_config;
  std::string manifest_hash;
  CheckpointSelection selection;
  std::vector<std::pair<std::string, std::vector<float>>> tensors;
};

inline void save_checkpoint(const std::string& path, const ModelConfig& mcfg,
                            const nlohmann::json& tcfg, const std::string& manifest_hash,
                            const CheckpointSelection& sel, const TransformerParams<float>& params) {
  const auto tensors = params.all();
  nlohmann::json header{{"format_version", kCheckpointVersion},
                        {"scalar", "f32"},
                        {"model_config", model_config_to_json(mcfg)},
                        {"train_config", tcfg},
                        {"manifest_hash", manifest_hash},
                        {"selection",
                         {{"mode", sel.mode}, {"step", sel.step}, {"metric", sel.metric}}}};
  nlohmann::json tlist = nlohmann::json::array();
  for (const auto* t : tensors) tlist.push_back({{"name", t->name}, {"shape", t->shape}});
  header["tensors"] = std::move(tlist);
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open '" + path + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto* t : tensors)
    out.write(reinterpret_cast<const char*>(t->value.data()),
              static_cast<std::streamsize>(t->value.size() * sizeof(float)));
  if (!out) throw DataError("save_checkpoint: write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("load_checkpoint: '" + path + "' is not a checkpoint file");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("load_checkpoint: truncated header in '" + path + "'");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: bad header in '" + path + "': " + e.what());
  }
  if (header.value("format_version", -1) != kCheckpointVersion)
    throw DataError("load_checkpoint: unsupported checkpoint version in '" + path + "'");

  Checkpoint ckpt;
  ckpt.model_config = model_config_from_json(header.at("model_config"));
  ckpt.train_config = header.at("train_config");
  ckpt.manifest_hash = header.at("manifest_hash").get<std::string>();
  ckpt.selection.mode = header.at("selection").at("mode").get<std::string>();
  ckpt.selection.step = header.at("selection").at("step").get<int>();
  ckpt.selection.metric = header.at("selection").at("metric").get<double>();
  for (const auto& jt : header.at("tensors")) {
    std::size_t n = 1;
    for (int dim : jt.at("shape").get<std::vector<int>>()) n *= static_cast<std::size_t>(dim);
    std::vector<float> data(n);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw DataError("load_checkpoint: truncated tensor data in '" + path + "'");
    ckpt.tensors.emplace_back(jt.at("name").get<std::string>(), std::move(data));
  }
  return ckpt;
}

inline void restore_parameters(Transformer<float>& model, const Checkpoint& ckpt) {
  auto params = model.params().all();
  if (params.size() != ckpt.tensors.size())
    throw DataError("restore_parameters: tensor count mismatch (checkpoint " +
                    std::to_string(ckpt.tensors.size()) + ", model " +
                    std::to_string(params.size()) + ")");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != ckpt.tensors[i].first ||
        params[i]->size() != ckpt.tensors[i].second.size())
      throw DataError("restore_parameters: tensor '" + ckpt.tensors[i].first +
                      "' does not match model tensor '" + params[i]->name + "'");
    params[i]->value = ckpt.tensors[i].second;
  }
}

// ----------------------------- evaluation -----------------------------

struct EvalMetrics {
  double median_mae = 0.0;
  double ks = 1.0;
  std::int64_t n = 0;
};

// Forward every window without dropout, turning logits into a PDF over pace
// bins; collects point summaries and PIT values.
template <typename S>
PredictionSet evaluate_model(Transformer<S>& model, std::span<const WindowInput> inputs,
                             std::span<const double> truths, const BinSpec& pace_bins) {
  PredictionSet out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto logits = model.forward(inputs[i], false, nullptr);
    double m = -std::numeric_limits<double>::infinity();
    for (S l : logits) m = std::max(m, static_cast<double>(l));
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
      probs[j] = std::exp(static_cast<double>(logits[j]) - m);
      z += probs[j];
    }
    for (auto& p : probs) p /= z;
    PredictedPDF pdf{std::move(probs), &pace_bins};
    const auto s = point_summaries(pdf);
    out.truths.push_back(truths[i]);
    out.mean.push_back(s.mean);
    out.median.push_back(s.median);
    out.mode.push_back(s.mode);
    out.pits.push_back(pit(pdf, truths[i]));
  }
  return out;
}

template <typename S>
EvalMetrics quick_metrics(Transformer<S>& model, std::span<const WindowInput> inputs,
                          std::span<const double> truths, const BinSpec& pace_bins) {
  auto preds = evaluate_model(model, inputs, truths, pace_bins);
  EvalMetrics m;
  m.n = static_cast<std::int64_t>(preds.truths.size());
  if (m.n == 0) return m;
  m.median_mae = mae_rmse(preds.median, preds.truths).mae;
  m.ks = ks_statistic(preds.pits);
  return m;
}

// ----------------------------- training loop -----------------------------

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double val_median_mae = 0.0;
  double val_ks = 0.0;
  bool evaluated = false;
};

struct ParameterSnapshot {
  std::vector<std::vector<float>> values;
  int step = 0;
  double metric = 0.0;

  void capture(const Transformer<float>& model, int at_step, double metric_value) {
    values.clear();
    for (const auto* t : model.params().all()) values.push_back(t->value);
    step = at_step;
    metric = metric_value;
  }
  void restore(Transformer<float>& model) const {
    auto params = model.params().all();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
  }
};

struct TrainResult {
  ParameterSnapshot best_mae;
  ParameterSnapshot best_ks;
  std::vector<TrainLogRow> log;
  bool diverged = false;
  int diverged_step = -1;
  double final_loss = 0.0;
};

struct TrainingData {
  std::vector<WindowInput> train_inputs;
  std::vector<double> train_labels;
  std::vector<SoftTarget> train_targets;  // empty when annealing is active
  std::vector<WindowInput> val_inputs;
  std::vector<double> val_labels;
  const BinSpec* pace_bins = nullptr;
};

// Deterministic single-threaded training: fixed batch order per seed, fixed
// dropout stream, evaluation on a held-out split at every eval interval.
// Best-median-MAE and best-KS parameter snapshots are retained.
inline TrainResult train_model(Transformer<float>& model, const TrainConfig& cfg,
                               const SmoothingConfig& smoothing, TrainingData& data) {
  cfg.validate();
  smoothing.validate();
  if (data.train_inputs.empty()) throw DataError("train_model: no training examples");
  if (data.pace_bins == nullptr) throw ConfigError("train_model: pace bins not set");

  const bool anneal = smoothing.anneal_steps > 0;
  if (!anneal && data.train_targets.size() != data.train_inputs.size())
    throw ConfigError("train_model: precomputed targets required when annealing is off");

  Rng order_rng(splitmix64(cfg.seed ^ 0x0badcafeULL));
  Rng dropout_rng(splitmix64(cfg.seed ^ 0xd20f007ULL));

  std::vector<std::size_t> order(data.train_inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  std::size_t cursor = 0;

  AdamW<float> opt;
  TrainResult result;

  auto evaluate = [&](int step) {
    const std::size_t n = std::min(data.val_inputs.size(),
                                   static_cast<std::size_t>(cfg.val_max_examples));
    EvalMetrics m;
    if (n > 0)
      m = quick_metrics(model, std::span(data.val_inputs).subspan(0, n),
                        std::span(data.val_labels).subspan(0, n), *data.pace_bins);
    if (result.best_mae.values.empty() || m.median_mae < result.best_mae.metric)
      result.best_mae.capture(model, step, m.median_mae);
    if (result.best_ks.values.empty() || m.ks < result.best_ks.metric)
      result.best_ks.capture(model, step, m.ks);
    return m;
  };

  // step 0: baseline metrics; makes the zero-step checkpoint the initialization
  {
    auto m = evaluate(0);
    TrainLogRow row;
    row.step = 0;
    row.loss = std::numeric_limits<double>::quiet_NaN();
    row.val_median_mae = m.median_mae;
    row.val_ks = m.ks;
    row.evaluated = true;
    result.log.push_back(row);
  }

  std::vector<WindowInput> batch_inputs;
  std::vector<SoftTarget> batch_targets;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    batch_inputs.clear();
    batch_targets.clear();
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      batch_inputs.push_back(data.train_inputs[idx]);
      if (anneal) {
        batch_targets.push_back(gaussian_integrated_target(
            data.train_labels[idx], *data.pace_bins, smoothing, smoothing.anneal_scale(step)));
      } else {
        batch_targets.push_back(data.train_targets[idx]);
      }
    }
    model.zero_grad();
    const double loss = batch_loss_and_grad<float>(model, batch_inputs, batch_targets,
                                                   model.config().dropout > 0 ? &dropout_rng : nullptr);
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.diverged_step = step;
      break;
    }
    opt.step(model.params().all(), cfg.base_lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
             cfg.adam_eps, cfg.grad_clip);
    result.final_loss = loss;

    TrainLogRow row;
    row.step = step;
    row.loss = loss;
    const bool eval_now =
        (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) || step == cfg.max_steps;
    if (eval_now) {
      auto m = evaluate(step);
      row.val_median_mae = m.median_mae;
      row.val_ks = m.ks;
      row.evaluated = true;
    }
    result.log.push_back(row);
  }
  return result;
}

}  // namespace pacecast

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pacecast/common.hpp"
#include "pacecast/quantizer.hpp"
#include "pacecast/soft_targets.hpp"
#include "pacecast/tensor.hpp"

namespace pacecast {

enum class InputEmbedding { discrete, soft_gaussian };

inline const char* to_string(InputEmbedding e) {
  return e == InputEmbedding::discrete ? "discrete" : "soft_gaussian";
}

inline InputEmbedding input_embedding_from_string(const std::string& s) {
  if (s == "discrete") return InputEmbedding::discrete;
  if (s == "soft_gaussian") return InputEmbedding::soft_gaussian;
  throw ConfigError("unknown input embedding mode '" + s + "'");
}

struct ModelConfig {
  int n_layers = 6;
  int n_heads = 8;
  int d_model = 512;
  int d_ff = 2048;
  double dropout = 0.12;
  int window_capacity = 327;
  int vocab_size = 0;
  int pace_bin_count = 0;
  InputEmbedding input_embedding = InputEmbedding::discrete;
  // soft_gaussian input weights reuse the adaptive smoothing formula
  double soft_embed_sigma_floor = 2.7;
  double soft_embed_k = 1.5;

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1)
      throw ConfigError("ModelConfig: dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("ModelConfig: d_model (" + std::to_string(d_model) +
                        ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("ModelConfig: dropout must be in [0,1)");
    if (window_capacity < 1) throw ConfigError("ModelConfig: window_capacity must be positive");
    if (vocab_size < 2) throw ConfigError("ModelConfig: vocab_size not set");
    if (pace_bin_count < 1) throw ConfigError("ModelConfig: pace_bin_count not set");
  }
};

// Gaussian weights over the bins of spec for a raw value x. Per-bin widths
// feed the adaptive sigma rule; weights are shifted by the max exponent
// before exponentiation so the normalization never underflows to zero.
inline std::vector<double> soft_embed_weights(double x, const BinSpec& spec, double sigma_floor,
                                              double k) {
  if (!std::isfinite(x)) throw std::invalid_argument("soft_embed_weights: non-finite x");
  const int n = spec.bin_count();
  std::vector<double> expo(static_cast<std::size_t>(n));
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double sigma_i = adaptive_sigma(bin_width(spec, i), sigma_floor, k);
    if (!(sigma_i > 0.0))
      throw NumericError("soft_embed_weights: sigma resolved to zero for bin " + std::to_string(i));
    const double d = (x - bin_center(spec, i)) / sigma_i;
    expo[static_cast<std::size_t>(i)] = -0.5 * d * d;
    best = std::max(best, expo[static_cast<std::size_t>(i)]);
  }
  double total = 0.0;
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(expo[static_cast<std::size_t>(i)] - best);
    total += w[static_cast<std::size_t>(i)];
  }
  if (!(total > 0.0)) throw NumericError("soft_embed_weights: all-zero weights");
  for (auto& v : w) v /= total;
  return w;
}

// One position of model input: a weighted mix of embedding rows. Discrete
// tokens are a single (id, 1.0) entry.
struct InputMix {
  std::int32_t first_id = 0;
  std::vector<float> weights;  // over consecutive ids starting at first_id
};

struct WindowInput {
  std::vector<std::int32_t> ids;  // tokens actually processed (may include PAD tail)
  int predict_pos = 0;
  // sparse overrides for soft_gaussian input mode; empty in discrete mode
  std::vector<std::pair<int, InputMix>> soft;
};

template <typename S>
struct TransformerParams {
  NamedTensor<S> embedding;  // [vocab, d]
  struct Layer {
    NamedTensor<S> ln1_gain, ln1_bias;
    NamedTensor<S> w_qkv, b_qkv;
    NamedTensor<S> w_attn_out, b_attn_out;
    NamedTensor<S> ln2_gain, ln2_bias;
    NamedTensor<S> w_ff1, b_ff1;
    NamedTensor<S> w_ff2, b_ff2;
  };
  std::vector<Layer> layers;
  NamedTensor<S> lnf_gain, lnf_bias;
  NamedTensor<S> w_head, b_head;

  std::vector<NamedTensor<S>*> all() {
    std::vector<NamedTensor<S>*> out{&embedding};
    for (auto& l : layers) {
      for (auto* t : {&l.ln1_gain, &l.ln1_bias, &l.w_qkv, &l.b_qkv, &l.w_attn_out, &l.b_attn_out,
                      &l.ln2_gain, &l.ln2_bias, &l.w_ff1, &l.b_ff1, &l.w_ff2, &l.b_ff2})
        out.push_back(t);
    }
    out.push_back(&lnf_gain);
    out.push_back(&lnf_bias);
    out.push_back(&w_head);
    out.push_back(&b_head);
    return out;
  }
  std::vector<const NamedTensor<S>*> all() const {
    auto* self = const_cast<TransformerParams*>(this);
    std::vector<const NamedTensor<S>*> out;
    for (auto* t : self->all()) out.push_back(t);
    return out;
  }
};

namespace detail {

template <typename S>
inline S gelu(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S u = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <typename S>
inline S gelu_grad(S x) {
  const S c = S(0.7978845608028654);
  const S u = c * (x + S(0.044715) * x * x * x);
  const S t = std::tanh(u);
  const S du = c * (S(1) + S(3) * S(0.044715) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

}  // namespace detail

// Decoder-only causal transformer over the stride grammar: pre-norm blocks,
// sinusoidal positions, dropout after the attention and FFN projections, and
// a pace-bin head read at the prediction position.
template <typename S>
class Transformer {
 public:
  Transformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    build(seed);
    build_positional();
  }

  const ModelConfig& config() const { return cfg_; }
  TransformerParams<S>& params() { return params_; }
  const TransformerParams<S>& params() const { return params_; }

  std::size_t total_parameters() const {
    std::size_t n = 0;
    for (const auto* t : params_.all()) n += t->size();
    return n;
  }

  void zero_grad() {
    for (auto* t : params_.all()) std::fill(t->grad.begin(), t->grad.end(), S(0));
  }

  // Logits over pace bins at the prediction position. Activations are kept
  // for a subsequent backward() on the same input. Dropout is active only
  // when training and a generator is supplied.
  std::vector<S> forward(const WindowInput& in, bool training = false, Rng* dropout_rng = nullptr) {
    const int L = static_cast<int>(in.ids.size());
    if (L < 1 || L > cfg_.window_capacity)
      throw NumericError("forward: sequence length " + std::to_string(L) +
                         " outside [1, " + std::to_string(cfg_.window_capacity) + "]");
    if (in.predict_pos < 0 || in.predict_pos >= L)
      throw NumericError("forward: predict_pos out of range");
    const int d = cfg_.d_model;
    ws_.L = L;
    ws_.predict_pos = in.predict_pos;
    ws_.dropout_on = training && cfg_.dropout > 0.0 && dropout_rng != nullptr;

    // input mixes: discrete rows unless overridden by a soft slot
    ws_.mixes.assign(static_cast<std::size_t>(L), {});
    for (int p = 0; p < L; ++p) {
      const std::int32_t id = in.ids[static_cast<std::size_t>(p)];
      if (id < 0 || id >= cfg_.vocab_size)
        throw NumericError("forward: token id " + std::to_string(id) + " out of vocabulary");
      ws_.mixes[static_cast<std::size_t>(p)] = {id, {1.0f}};
    }
    for (const auto& [pos, mix] : in.soft) {
      if (pos < 0 || pos >= L) continue;
      if (mix.first_id < 0 || mix.first_id + static_cast<int>(mix.weights.size()) > cfg_.vocab_size)
        throw NumericError("forward: soft slot range out of vocabulary");
      ws_.mixes[static_cast<std::size_t>(pos)] = mix;
    }

    ws_.pad_key.assign(static_cast<std::size_t>(L), 0);
    for (int p = 0; p < L; ++p)
      ws_.pad_key[static_cast<std::size_t>(p)] = in.ids[static_cast<std::size_t>(p)] == 0 ? 1 : 0;

    // embedding + positional
    ws_.x0.assign(static_cast<std::size_t>(L) * d, S(0));
    for (int p = 0; p < L; ++p) {
      S* row = ws_.x0.data() + static_cast<std::size_t>(p) * d;
      const auto& mix = ws_.mixes[static_cast<std::size_t>(p)];
      for (std::size_t wi = 0; wi < mix.weights.size(); ++wi) {
        const S w = static_cast<S>(mix.weights[wi]);
        const S* e = params_.embedding.value.data() +
                     (static_cast<std::size_t>(mix.first_id) + wi) * d;
        for (int c = 0; c < d; ++c) row[c] += w * e[c];
      }
      const S* pe = positional_.data() + static_cast<std::size_t>(p) * d;
      for (int c = 0; c < d; ++c) row[c] += pe[c];
    }

    ws_.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    const S* x = ws_.x0.data();
    for (int l = 0; l < cfg_.n_layers; ++l) {
      x = forward_layer(l, x, training, dropout_rng);
    }

    // final norm + head at the prediction position only
    const S* xp = x + static_cast<std::size_t>(in.predict_pos) * d;
    ws_.lnf_xhat.assign(static_cast<std::size_t>(d), S(0));
    ws_.lnf_out.assign(static_cast<std::size_t>(d), S(0));
    layernorm_row(xp, params_.lnf_gain.value.data(), params_.lnf_bias.value.data(), d,
                  ws_.lnf_xhat.data(), ws_.lnf_out.data(), &ws_.lnf_rstd);

    const int K = cfg_.pace_bin_count;
    std::vector<S> logits(static_cast<std::size_t>(K), S(0));
    gemm<S>(ws_.lnf_out.data(), params_.w_head.value.data(), logits.data(), 1, d, K);
    for (int j = 0; j < K; ++j) logits[static_cast<std::size_t>(j)] += params_.b_head.value[static_cast<std::size_t>(j)];
    for (S v : logits)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("forward: non-finite logits at the prediction position");
    ws_.logits = logits;
    ws_.valid = true;
    return logits;
  }

  // Accumulates parameter gradients for the most recent forward pass.
  // dlogits is the loss gradient at the prediction-position logits.
  void backward(std::span<const S> dlogits) {
    if (!ws_.valid) throw NumericError("backward: no forward activations available");
    const int d = cfg_.d_model;
    const int K = cfg_.pace_bin_count;
    const int L = ws_.L;
    if (static_cast<int>(dlogits.size()) != K)
      throw NumericError("backward: dlogits size mismatch");

    // head
    std::vector<S> dlnf_out(static_cast<std::size_t>(d), S(0));
    gemm_nt<S>(dlogits.data(), params_.w_head.value.data(), dlnf_out.data(), 1, K, d);
    // w_head [d, K] laid out row-major: grad += lnf_out^T (1xd)^T * dlogits (1xK)
    gemm_tn_acc<S>(ws_.lnf_out.data(), dlogits.data(), params_.w_head.grad.data(), 1, d, K);
    for (int j = 0; j < K; ++j) params_.b_head.grad[static_cast<std::size_t>(j)] += dlogits[static_cast<std::size_t>(j)];

    // residual-stream gradient, nonzero only at predict_pos before the last layer
    auto& dx = ws_.bw_dx;
    dx.assign(static_cast<std::size_t>(L) * d, S(0));
    const S* x_final = cfg_.n_layers > 0 ? ws_.layers.back().x_out.data() : ws_.x0.data();
    layernorm_row_backward(x_final + static_cast<std::size_t>(ws_.predict_pos) * d,
                           ws_.lnf_xhat.data(), ws_.lnf_rstd, params_.lnf_gain.value.data(),
                           dlnf_out.data(), d, params_.lnf_gain.grad.data(),
                           params_.lnf_bias.grad.data(),
                           dx.data() + static_cast<std::size_t>(ws_.predict_pos) * d);

    for (int l = cfg_.n_layers - 1; l >= 0; --l) backward_layer(l, dx.data());

    // embedding rows
    for (int p = 0; p < L; ++p) {
      const auto& mix = ws_.mixes[static_cast<std::size_t>(p)];
      const S* drow = dx.data() + static_cast<std::size_t>(p) * d;
      for (std::size_t wi = 0; wi < mix.weights.size(); ++wi) {
        const S w = static_cast<S>(mix.weights[wi]);
        S* g = params_.embedding.grad.data() + (static_cast<std::size_t>(mix.first_id) + wi) * d;
        for (int c = 0; c < d; ++c) g[c] += w * drow[c];
      }
    }
    ws_.valid = false;
  }

  // Halts with the offending tensor named; called once per batch.
  void check_gradients_finite() const {
    for (const auto* t : params_.all()) {
      for (S g : t->grad)
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError("backward: non-finite gradient in tensor '" + t->name + "'");
    }
  }

  // Attention probabilities of the most recent forward: [head][query*L+key].
  const std::vector<S>& attention_probs(int layer) const {
    return ws_.layers[static_cast<std::size_t>(layer)].att_probs;
  }
  int last_seq_len() const { return ws_.L; }

  // L2 norms of the attention and FFN residual updates at the prediction
  // position, per layer.
  struct LayerContribution {
    double attention = 0.0;
    double ffn = 0.0;
  };
  std::vector<LayerContribution> layer_contributions() const {
    std::vector<LayerContribution> out;
    const int d = cfg_.d_model;
    for (const auto& lw : ws_.layers) {
      LayerContribution c;
      const S* a = lw.att_proj.data() + static_cast<std::size_t>(ws_.predict_pos) * d;
      const S* f = lw.ff_proj.data() + static_cast<std::size_t>(ws_.predict_pos) * d;
      double sa = 0.0, sf = 0.0;
      for (int i = 0; i < d; ++i) {
        sa += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        sf += static_cast<double>(f[i]) * static_cast<double>(f[i]);
      }
      c.attention = std::sqrt(sa);
      c.ffn = std::sqrt(sf);
      out.push_back(c);
    }
    return out;
  }

 private:
  struct LayerWork {
    std::vector<S> x_in, ln1_out, qkv, att_probs, att_ctx, att_proj, drop1, x_mid, ln2_out,
        ff_pre, ff_act, ff_proj, drop2, x_out;
    std::vector<S> ln1_xhat, ln2_xhat;
    std::vector<S> ln1_rstd, ln2_rstd;
  };

  struct Workspace {
    bool valid = false;
    bool dropout_on = false;
    int L = 0;
    int predict_pos = 0;
    std::vector<InputMix> mixes;
    std::vector<std::uint8_t> pad_key;
    std::vector<S> x0;
    std::vector<LayerWork> layers;
    std::vector<S> lnf_xhat, lnf_out, logits;
    S lnf_rstd = S(0);
    // backward scratch, reused across calls
    std::vector<S> bw_dx, bw_dff_proj, bw_dff_act, bw_dln2, bw_datt_proj, bw_datt_ctx, bw_dqkv,
        bw_dln1, bw_da;
  };

  void build(std::uint64_t seed) {
    const int d = cfg_.d_model;
    Rng rng(splitmix64(seed ^ 0x9c0ffee1u));
    auto normal_fill = [&](NamedTensor<S>& t, double std) {
      for (auto& v : t.value) v = static_cast<S>(rng.normal(0.0, std));
    };
    const double proj_std = 0.02;

    params_.embedding.init_shape("embedding", {cfg_.vocab_size, d});
    normal_fill(params_.embedding, proj_std);
    params_.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      auto& lay = params_.layers[static_cast<std::size_t>(l)];
      const std::string p = "layers." + std::to_string(l) + ".";
      lay.ln1_gain.init_shape(p + "ln1_gain", {d});
      lay.ln1_bias.init_shape(p + "ln1_bias", {d});
      std::fill(lay.ln1_gain.value.begin(), lay.ln1_gain.value.end(), S(1));
      lay.w_qkv.init_shape(p + "w_qkv", {d, 3 * d});
      normal_fill(lay.w_qkv, proj_std);
      lay.b_qkv.init_shape(p + "b_qkv", {3 * d});
      lay.w_attn_out.init_shape(p + "w_attn_out", {d, d});
      normal_fill(lay.w_attn_out, proj_std / std::sqrt(2.0 * cfg_.n_layers));
      lay.b_attn_out.init_shape(p + "b_attn_out", {d});
      lay.ln2_gain.init_shape(p + "ln2_gain", {d});
      lay.ln2_bias.init_shape(p + "ln2_bias", {d});
      std::fill(lay.ln2_gain.value.begin(), lay.ln2_gain.value.end(), S(1));
      lay.w_ff1.init_shape(p + "w_ff1", {d, cfg_.d_ff});
      normal_fill(lay.w_ff1, proj_std);
      lay.b_ff1.init_shape(p + "b_ff1", {cfg_.d_ff});
      lay.w_ff2.init_shape(p + "w_ff2", {cfg_.d_ff, d});
      normal_fill(lay.w_ff2, proj_std / std::sqrt(2.0 * cfg_.n_layers));
      lay.b_ff2.init_shape(p + "b_ff2", {d});
    }
    params_.lnf_gain.init_shape("lnf_gain", {d});
    std::fill(params_.lnf_gain.value.begin(), params_.lnf_gain.value.end(), S(1));
    params_.lnf_bias.init_shape("lnf_bias", {d});
    params_.w_head.init_shape("w_head", {d, cfg_.pace_bin_count});
    normal_fill(params_.w_head, proj_std);
    params_.b_head.init_shape("b_head", {cfg_.pace_bin_count});
  }

  void build_positional() {
    const int d = cfg_.d_model;
    positional_.assign(static_cast<std::size_t>(cfg_.window_capacity) * d, S(0));
    for (int p = 0; p < cfg_.window_capacity; ++p) {
      S* row = positional_.data() + static_cast<std::size_t>(p) * d;
      for (int c = 0; c + 1 < d; c += 2) {
        const double rate = std::pow(10000.0, -static_cast<double>(c) / d);
        row[c] = static_cast<S>(std::sin(p * rate));
        row[c + 1] = static_cast<S>(std::cos(p * rate));
      }
      if (d % 2 == 1) {
        const double rate = std::pow(10000.0, -static_cast<double>(d - 1) / d);
        row[d - 1] = static_cast<S>(std::sin(p * rate));
      }
    }
  }

  static void layernorm_row(const S* x, const S* gain, const S* bias, int d, S* xhat, S* out,
                            S* rstd) {
    S mean = S(0);
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (int i = 0; i < d; ++i) {
      const S c = x[i] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S r = S(1) / std::sqrt(var + S(1e-5));
    *rstd = r;
    for (int i = 0; i < d; ++i) {
      xhat[i] = (x[i] - mean) * r;
      out[i] = xhat[i] * gain[i] + bias[i];
    }
  }

  static void layernorm_row_backward(const S* /*x*/, const S* xhat, S rstd, const S* gain,
                                     const S* dout, int d, S* dgain, S* dbias, S* dx_acc) {
    S sum_dy = S(0), sum_dy_xhat = S(0);
    for (int i = 0; i < d; ++i) {
      const S dy = dout[i] * gain[i];
      sum_dy += dy;
      sum_dy_xhat += dy * xhat[i];
      dgain[i] += dout[i] * xhat[i];
      dbias[i] += dout[i];
    }
    const S inv_d = S(1) / static_cast<S>(d);
    for (int i = 0; i < d; ++i) {
      const S dy = dout[i] * gain[i];
      dx_acc[i] += rstd * (dy - inv_d * sum_dy - xhat[i] * inv_d * sum_dy_xhat);
    }
  }

  const S* forward_layer(int l, const S* x_in, bool training, Rng* rng) {
    const int L = ws_.L;
    const int d = cfg_.d_model;
    const int H = cfg_.n_heads;
    const int hd = d / H;
    auto& w = ws_.layers[static_cast<std::size_t>(l)];
    auto& p = params_.layers[static_cast<std::size_t>(l)];
    const auto Ld = static_cast<std::size_t>(L) * d;

    w.x_in.assign(x_in, x_in + Ld);
    w.ln1_out.assign(Ld, S(0));
    w.ln1_xhat.assign(Ld, S(0));
    w.ln1_rstd.assign(static_cast<std::size_t>(L), S(0));
    for (int i = 0; i < L; ++i)
      layernorm_row(x_in + static_cast<std::size_t>(i) * d, p.ln1_gain.value.data(),
                    p.ln1_bias.value.data(), d, w.ln1_xhat.data() + static_cast<std::size_t>(i) * d,
                    w.ln1_out.data() + static_cast<std::size_t>(i) * d,
                    &w.ln1_rstd[static_cast<std::size_t>(i)]);

    w.qkv.assign(static_cast<std::size_t>(L) * 3 * d, S(0));
    gemm<S>(w.ln1_out.data(), p.w_qkv.value.data(), w.qkv.data(), L, d, 3 * d);
    for (int i = 0; i < L; ++i) {
      S* row = w.qkv.data() + static_cast<std::size_t>(i) * 3 * d;
      for (int j = 0; j < 3 * d; ++j) row[j] += p.b_qkv.value[static_cast<std::size_t>(j)];
    }

    // causal attention; PAD keys are masked out
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    w.att_probs.assign(static_cast<std::size_t>(H) * L * L, S(0));
    w.att_ctx.assign(Ld, S(0));
    std::vector<S> scores(static_cast<std::size_t>(L));
    for (int h = 0; h < H; ++h) {
      const int qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
      for (int i = 0; i < L; ++i) {
        const S* qi = w.qkv.data() + static_cast<std::size_t>(i) * 3 * d + qo;
        S best = -std::numeric_limits<S>::infinity();
        for (int j = 0; j <= i; ++j) {
          if (ws_.pad_key[static_cast<std::size_t>(j)]) continue;
          const S* kj = w.qkv.data() + static_cast<std::size_t>(j) * 3 * d + ko;
          const S acc = dot(qi, kj, hd) * scale;
          scores[static_cast<std::size_t>(j)] = acc;
          best = std::max(best, acc);
        }
        S* probs = w.att_probs.data() + (static_cast<std::size_t>(h) * L + i) * L;
        S total = S(0);
        for (int j = 0; j <= i; ++j) {
          if (ws_.pad_key[static_cast<std::size_t>(j)]) continue;
          const S e = std::exp(scores[static_cast<std::size_t>(j)] - best);
          probs[j] = e;
          total += e;
        }
        const S inv_total = S(1) / total;
        S* ctx = w.att_ctx.data() + static_cast<std::size_t>(i) * d + h * hd;
        for (int j = 0; j <= i; ++j) {
          if (ws_.pad_key[static_cast<std::size_t>(j)]) continue;
          probs[j] *= inv_total;
          const S* vj = w.qkv.data() + static_cast<std::size_t>(j) * 3 * d + vo;
          const S a = probs[j];
          for (int c = 0; c < hd; ++c) ctx[c] += a * vj[c];
        }
      }
    }

    w.att_proj.assign(Ld, S(0));
    gemm<S>(w.att_ctx.data(), p.w_attn_out.value.data(), w.att_proj.data(), L, d, d);
    for (int i = 0; i < L; ++i) {
      S* row = w.att_proj.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) row[j] += p.b_attn_out.value[static_cast<std::size_t>(j)];
    }

    w.x_mid.assign(Ld, S(0));
    apply_dropout(w.att_proj, w.drop1, training, rng);
    for (std::size_t i = 0; i < Ld; ++i) w.x_mid[i] = w.x_in[i] + w.att_proj[i];

    w.ln2_out.assign(Ld, S(0));
    w.ln2_xhat.assign(Ld, S(0));
    w.ln2_rstd.assign(static_cast<std::size_t>(L), S(0));
    for (int i = 0; i < L; ++i)
      layernorm_row(w.x_mid.data() + static_cast<std::size_t>(i) * d, p.ln2_gain.value.data(),
                    p.ln2_bias.value.data(), d, w.ln2_xhat.data() + static_cast<std::size_t>(i) * d,
                    w.ln2_out.data() + static_cast<std::size_t>(i) * d,
                    &w.ln2_rstd[static_cast<std::size_t>(i)]);

    const auto Lf = static_cast<std::size_t>(L) * cfg_.d_ff;
    w.ff_pre.assign(Lf, S(0));
    gemm<S>(w.ln2_out.data(), p.w_ff1.value.data(), w.ff_pre.data(), L, d, cfg_.d_ff);
    for (int i = 0; i < L; ++i) {
      S* row = w.ff_pre.data() + static_cast<std::size_t>(i) * cfg_.d_ff;
      for (int j = 0; j < cfg_.d_ff; ++j) row[j] += p.b_ff1.value[static_cast<std::size_t>(j)];
    }
    w.ff_act.assign(Lf, S(0));
    for (std::size_t i = 0; i < Lf; ++i) w.ff_act[i] = detail::gelu(w.ff_pre[i]);

    w.ff_proj.assign(Ld, S(0));
    gemm<S>(w.ff_act.data(), p.w_ff2.value.data(), w.ff_proj.data(), L, cfg_.d_ff, d);
    for (int i = 0; i < L; ++i) {
      S* row = w.ff_proj.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) row[j] += p.b_ff2.value[static_cast<std::size_t>(j)];
    }
    apply_dropout(w.ff_proj, w.drop2, training, rng);

    w.x_out.assign(Ld, S(0));
    for (std::size_t i = 0; i < Ld; ++i) w.x_out[i] = w.x_mid[i] + w.ff_proj[i];
    return w.x_out.data();
  }

  void apply_dropout(std::vector<S>& buf, std::vector<S>& mask, bool training, Rng* rng) {
    if (!(training && cfg_.dropout > 0.0 && rng != nullptr)) {
      mask.clear();
      return;
    }
    const S keep = S(1) - static_cast<S>(cfg_.dropout);
    const S inv_keep = S(1) / keep;
    mask.assign(buf.size(), S(0));
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const bool kept = rng->uniform() >= cfg_.dropout;
      mask[i] = kept ? inv_keep : S(0);
      buf[i] *= mask[i];
    }
  }

  void backward_layer(int l, S* dx) {
    const int L = ws_.L;
    const int d = cfg_.d_model;
    const int H = cfg_.n_heads;
    const int hd = d / H;
    auto& w = ws_.layers[static_cast<std::size_t>(l)];
    auto& p = params_.layers[static_cast<std::size_t>(l)];
    const auto Ld = static_cast<std::size_t>(L) * d;
    const auto Lf = static_cast<std::size_t>(L) * cfg_.d_ff;

    // dx currently holds the gradient at x_out = x_mid + dropout(ff_proj)
    auto& dff_proj = ws_.bw_dff_proj;
    dff_proj.assign(dx, dx + Ld);
    if (!w.drop2.empty())
      for (std::size_t i = 0; i < Ld; ++i) dff_proj[i] *= w.drop2[i];
    for (int i = 0; i < L; ++i) {
      const S* row = dff_proj.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) p.b_ff2.grad[static_cast<std::size_t>(j)] += row[j];
    }
    gemm_tn_acc<S>(w.ff_act.data(), dff_proj.data(), p.w_ff2.grad.data(), L, cfg_.d_ff, d);
    auto& dff_act = ws_.bw_dff_act;
    dff_act.resize(Lf);
    gemm_nt<S>(dff_proj.data(), p.w_ff2.value.data(), dff_act.data(), L, d, cfg_.d_ff);
    for (std::size_t i = 0; i < Lf; ++i) dff_act[i] *= detail::gelu_grad(w.ff_pre[i]);
    for (int i = 0; i < L; ++i) {
      const S* row = dff_act.data() + static_cast<std::size_t>(i) * cfg_.d_ff;
      for (int j = 0; j < cfg_.d_ff; ++j) p.b_ff1.grad[static_cast<std::size_t>(j)] += row[j];
    }
    gemm_tn_acc<S>(w.ln2_out.data(), dff_act.data(), p.w_ff1.grad.data(), L, d, cfg_.d_ff);
    auto& dln2_out = ws_.bw_dln2;
    dln2_out.resize(Ld);
    gemm_nt<S>(dff_act.data(), p.w_ff1.value.data(), dln2_out.data(), L, cfg_.d_ff, d);

    // through ln2 into x_mid; dx keeps its residual component
    for (int i = 0; i < L; ++i)
      layernorm_row_backward(w.x_mid.data() + static_cast<std::size_t>(i) * d,
                             w.ln2_xhat.data() + static_cast<std::size_t>(i) * d,
                             w.ln2_rstd[static_cast<std::size_t>(i)], p.ln2_gain.value.data(),
                             dln2_out.data() + static_cast<std::size_t>(i) * d, d,
                             p.ln2_gain.grad.data(), p.ln2_bias.grad.data(),
                             dx + static_cast<std::size_t>(i) * d);

    // dx now holds the gradient at x_mid = x_in + dropout(att_proj)
    auto& datt_proj = ws_.bw_datt_proj;
    datt_proj.assign(dx, dx + Ld);
    if (!w.drop1.empty())
      for (std::size_t i = 0; i < Ld; ++i) datt_proj[i] *= w.drop1[i];
    for (int i = 0; i < L; ++i) {
      const S* row = datt_proj.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) p.b_attn_out.grad[static_cast<std::size_t>(j)] += row[j];
    }
    gemm_tn_acc<S>(w.att_ctx.data(), datt_proj.data(), p.w_attn_out.grad.data(), L, d, d);
    auto& datt_ctx = ws_.bw_datt_ctx;
    datt_ctx.resize(Ld);
    gemm_nt<S>(datt_proj.data(), p.w_attn_out.value.data(), datt_ctx.data(), L, d, d);

    // attention backward into dqkv
    auto& dqkv = ws_.bw_dqkv;
    dqkv.assign(static_cast<std::size_t>(L) * 3 * d, S(0));
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    auto& da = ws_.bw_da;
    da.resize(static_cast<std::size_t>(L));
    for (int h = 0; h < H; ++h) {
      const int qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
      for (int i = 0; i < L; ++i) {
        const S* probs = w.att_probs.data() + (static_cast<std::size_t>(h) * L + i) * L;
        const S* dctx = datt_ctx.data() + static_cast<std::size_t>(i) * d + h * hd;
        S row_dot = S(0);
        for (int j = 0; j <= i; ++j) {
          if (probs[j] == S(0)) {
            da[static_cast<std::size_t>(j)] = S(0);
            continue;
          }
          const S* vj = w.qkv.data() + static_cast<std::size_t>(j) * 3 * d + vo;
          const S acc = dot(dctx, vj, hd);
          da[static_cast<std::size_t>(j)] = acc;
          row_dot += probs[j] * acc;
          // dv_j += a_ij * dctx_i
          S* dvj = dqkv.data() + static_cast<std::size_t>(j) * 3 * d + vo;
          for (int c = 0; c < hd; ++c) dvj[c] += probs[j] * dctx[c];
        }
        const S* qi = w.qkv.data() + static_cast<std::size_t>(i) * 3 * d + qo;
        S* dqi = dqkv.data() + static_cast<std::size_t>(i) * 3 * d + qo;
        for (int j = 0; j <= i; ++j) {
          if (probs[j] == S(0)) continue;
          const S ds = probs[j] * (da[static_cast<std::size_t>(j)] - row_dot) * scale;
          const S* kj = w.qkv.data() + static_cast<std::size_t>(j) * 3 * d + ko;
          S* dkj = dqkv.data() + static_cast<std::size_t>(j) * 3 * d + ko;
          for (int c = 0; c < hd; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }

    for (int i = 0; i < L; ++i) {
      const S* row = dqkv.data() + static_cast<std::size_t>(i) * 3 * d;
      for (int j = 0; j < 3 * d; ++j) p.b_qkv.grad[static_cast<std::size_t>(j)] += row[j];
    }
    gemm_tn_acc<S>(w.ln1_out.data(), dqkv.data(), p.w_qkv.grad.data(), L, d, 3 * d);
    auto& dln1_out = ws_.bw_dln1;
    dln1_out.resize(Ld);
    gemm_nt<S>(dqkv.data(), p.w_qkv.value.data(), dln1_out.data(), L, 3 * d, d);

    for (int i = 0; i < L; ++i)
      layernorm_row_backward(w.x_in.data() + static_cast<std::size_t>(i) * d,
                             w.ln1_xhat.data() + static_cast<std::size_t>(i) * d,
                             w.ln1_rstd[static_cast<std::size_t>(i)], p.ln1_gain.value.data(),
                             dln1_out.data() + static_cast<std::size_t>(i) * d, d,
                             p.ln1_gain.grad.data(), p.ln1_bias.grad.data(),
                             dx + static_cast<std::size_t>(i) * d);
  }

  ModelConfig cfg_;
  TransformerParams<S> params_;
  std::vector<S> positional_;
  Workspace ws_;
};

// Softmax of the prediction logits together with the smoothed cross-entropy
// loss gradient (softmax - T).
inline std::pair<double, std::vector<double>> loss_and_dlogits(std::span<const double> logits,
                                                               const SoftTarget& target) {
  const double loss = smoothed_cross_entropy(logits, target);
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) m = std::max(m, l);
  double z = 0.0;
  std::vector<double> soft(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    soft[i] = std::exp(logits[i] - m);
    z += soft[i];
  }
  std::vector<double> dlogits(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    dlogits[i] = soft[i] / z - target.probs[i];
  return {loss, std::move(dlogits)};
}

}  // namespace pacecast

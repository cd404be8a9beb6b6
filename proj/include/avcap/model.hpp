#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "avcap/errors.hpp"
#include "avcap/ops.hpp"
#include "avcap/rng.hpp"
#include "avcap/tensor.hpp"

namespace avcap {

// Reserved token ids; every vocabulary starts with these.
inline constexpr int kPadId = 0;
inline constexpr int kSosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

struct ModelConfig {
  std::size_t enc_blocks = 2;
  std::size_t dec_blocks = 2;
  std::size_t heads = 4;
  std::size_t d_audio = 16;
  std::size_t d_visual = 32;
  std::size_t d_embed = 32;
  std::size_t ffn_audio = 128;
  std::size_t ffn_visual = 256;
  std::size_t ffn_decoder = 256;
  std::size_t det_channels = 64;
  std::size_t det_kernel = 3;
  std::size_t det_ffn_hidden = 64;
  std::size_t vocab_size = 0;
  double dropout = 0.1;
  std::size_t max_decode_len = 30;

  void validate() const {
    if (enc_blocks < 1 || dec_blocks < 1) throw ConfigError("model: need at least one encoder and one decoder block");
    if (heads < 1) throw ConfigError("model: heads must be >= 1");
    if (d_audio % heads || d_visual % heads || d_embed % heads)
      throw ConfigError("model: widths must be divisible by head count");
    if (det_kernel % 2 == 0) throw ConfigError("model: detector kernel width must be odd");
    if (vocab_size < 5) throw ConfigError("model: vocabulary must contain at least one word beyond the reserved ids");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0,1)");
    if (max_decode_len < 1) throw ConfigError("model: max_decode_len must be >= 1");
  }
};

// Dropout source and train/eval switch threaded through forward passes.
struct ForwardCtx {
  Rng* rng = nullptr;
  bool training = false;

  bool drop() const { return training && rng != nullptr; }
};

template <typename S>
struct LayerNormT {
  TensorT<S> gain, bias;
};

template <typename S>
struct FfnT {
  TensorT<S> w1, b1, w2, b2;
};

template <typename S>
struct Conv1dT {
  TensorT<S> kernels, bias;
};

template <typename S>
struct EncoderBlockT {
  // Per modality: pre-norm self-attention, pre-norm cross attention against
  // the other modality, pre-norm feed-forward. Residual around each.
  LayerNormT<S> self_ln_a, self_ln_v;
  AttentionWeightsT<S> self_a, self_v;
  LayerNormT<S> cross_ln_q_a, cross_ln_kv_a;  // audio queries visual keys/values
  LayerNormT<S> cross_ln_q_v, cross_ln_kv_v;
  AttentionWeightsT<S> cross_a, cross_v;
  LayerNormT<S> ffn_ln_a, ffn_ln_v;
  FfnT<S> ffn_a, ffn_v;
};

template <typename S>
struct DecoderBlockT {
  LayerNormT<S> self_ln;
  AttentionWeightsT<S> self_attn;
  LayerNormT<S> src_ln_a, src_ln_v;
  AttentionWeightsT<S> src_a, src_v;
  TensorT<S> fuse_w, fuse_b;  // restores embed width after source concat
  LayerNormT<S> ffn_ln;
  FfnT<S> ffn;
};

template <typename S>
struct DetectorT {
  Conv1dT<S> conv_a1, conv_a2, conv_v1, conv_v2;
  FfnT<S> ffn;
};

// Encoded prefix representation shared by the detector and the decoder.
template <typename S>
struct EncodingsT {
  TensorT<S> audio;   // [T_a x d_audio]
  TensorT<S> visual;  // [T_v x d_visual]
  std::vector<std::uint8_t> audio_valid;
  std::vector<std::uint8_t> visual_valid;
};

// One teacher-forcing pass: per-position next-word distributions plus the
// logits tensor still attached to the graph for loss construction.
template <typename S>
struct ForcedResultT {
  TensorT<S> logits;                         // [L x V], graph tensor
  std::vector<std::vector<S>> distributions; // detached softmax rows
  std::vector<int> argmax;                   // per-position best next word
};

// One beam-search hypothesis; tokens exclude <sos> and may end with <eos>.
struct BeamHyp {
  std::vector<int> tokens;
  double sum_logp = 0.0;
  bool done = false;

  // Normalizing length counts generated tokens including <eos>.
  double normalized() const { return tokens.empty() ? -1e30 : sum_logp / double(tokens.size()); }
};

// Length-normalized beam search over a next-token log-probability callable
// (`next` receives the prefix including <sos>). Each step keeps the `width`
// best pool entries by cumulative log probability; entries emitting <eos>
// retire. The best retired hypothesis — or the best alive one at the length
// limit — wins under the normalized score. The argmax rollout always competes
// as a candidate, so the result never ranks below greedy; with width 1 the
// search degenerates to greedy exactly.
template <typename NextFn>
std::vector<int> beam_search(NextFn&& next, std::size_t width, std::size_t max_len) {
  if (width == 0) throw ConfigError("beam_search: width must be >= 1");
  std::vector<BeamHyp> alive{BeamHyp{}};
  std::vector<BeamHyp> retired;
  for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<BeamHyp> pool;
    for (const BeamHyp& h : alive) {
      std::vector<int> prefix{kSosId};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      std::vector<double> logp = next(prefix);
      for (std::size_t j = 0; j < logp.size(); ++j) {
        BeamHyp ext = h;
        ext.tokens.push_back(static_cast<int>(j));
        ext.sum_logp += logp[j];
        ext.done = static_cast<int>(j) == kEosId;
        pool.push_back(std::move(ext));
      }
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const BeamHyp& a, const BeamHyp& b) { return a.sum_logp > b.sum_logp; });
    alive.clear();
    for (std::size_t i = 0; i < pool.size() && i < width; ++i) {
      if (pool[i].done)
        retired.push_back(std::move(pool[i]));
      else
        alive.push_back(std::move(pool[i]));
    }
  }
  std::vector<BeamHyp> candidates = retired;
  candidates.insert(candidates.end(), alive.begin(), alive.end());
  {
    BeamHyp g;
    std::vector<int> prefix{kSosId};
    for (std::size_t step = 0; step < max_len; ++step) {
      std::vector<double> logp = next(prefix);
      std::size_t best = 0;
      for (std::size_t j = 1; j < logp.size(); ++j)
        if (logp[j] > logp[best]) best = j;
      g.tokens.push_back(static_cast<int>(best));
      g.sum_logp += logp[best];
      if (static_cast<int>(best) == kEosId) {
        g.done = true;
        break;
      }
      prefix.push_back(static_cast<int>(best));
    }
    candidates.push_back(std::move(g));
  }
  const BeamHyp* best = nullptr;
  for (const BeamHyp& h : candidates)
    if (!best || h.normalized() > best->normalized()) best = &h;
  std::vector<int> out = best->tokens;
  while (!out.empty() && out.back() == kEosId) out.pop_back();
  return out;
}

namespace detail {

// Fixed sinusoidal position table.
template <typename S>
TensorT<S> sinusoidal_encoding(std::size_t len, std::size_t dim) {
  TensorT<S> pe = TensorT<S>::zeros({len, dim});
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      (*pe.data)[t * dim + i] = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

}  // namespace detail

// The bi-modal captioning model: streaming audio-visual encoder, end
// detector, and autoregressive caption decoder over one parameter set.
// Parameters are registered in a fixed order under stable names so that
// checkpoints round-trip bit-exactly.
template <typename S>
class ModelT {
 public:
  ModelT(const ModelConfig& cfg, std::uint64_t param_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(param_seed);
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, TensorT<S>>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, TensorT<S>>>& parameters() const { return params_; }

  TensorT<S>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("model: unknown parameter " + name);
    return params_[it->second].second;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  // Detector parameters are the "det." prefix; everything else belongs to the
  // captioner (encoder + decoder).
  static bool is_detector_param(const std::string& name) { return name.rfind("det.", 0) == 0; }

  // ---- Encoder ----------------------------------------------------------

  EncodingsT<S> encode(const TensorT<S>& audio, const TensorT<S>& visual, ForwardCtx ctx = {},
                       std::vector<std::uint8_t> audio_valid = {}, std::vector<std::uint8_t> visual_valid = {}) const {
    if (audio.rank() != 2 || visual.rank() != 2) throw ShapeError("encode: feature inputs must be rank-2");
    if (audio.dims[0] < 1 || visual.dims[0] < 1)
      throw ContractError("encode: both modalities require at least one frame");
    if (audio.dims[1] != cfg_.d_audio)
      throw ShapeError("encode: audio width " + std::to_string(audio.dims[1]) + " != configured " +
                       std::to_string(cfg_.d_audio));
    if (visual.dims[1] != cfg_.d_visual)
      throw ShapeError("encode: visual width " + std::to_string(visual.dims[1]) + " != configured " +
                       std::to_string(cfg_.d_visual));
    const std::size_t ta = audio.dims[0], tv = visual.dims[0];
    if (audio_valid.empty()) audio_valid.assign(ta, 1);
    if (visual_valid.empty()) visual_valid.assign(tv, 1);
    if (audio_valid.size() != ta || visual_valid.size() != tv)
      throw ShapeError("encode: validity mask length mismatch");

    // Inputs are scaled by sqrt(width) before the position table is added,
    // the same balance used for the word embeddings; otherwise the unit-
    // amplitude encoding drowns the feature content on the low dimensions.
    TensorT<S> a = add(scale(audio, static_cast<S>(std::sqrt(double(cfg_.d_audio)))),
                       detail::sinusoidal_encoding<S>(ta, cfg_.d_audio));
    TensorT<S> v = add(scale(visual, static_cast<S>(std::sqrt(double(cfg_.d_visual)))),
                       detail::sinusoidal_encoding<S>(tv, cfg_.d_visual));

    const Mask self_a = Mask::keys_valid(ta, audio_valid);
    const Mask self_v = Mask::keys_valid(tv, visual_valid);
    const Mask cross_av = Mask::keys_valid(ta, visual_valid);  // audio queries, visual keys
    const Mask cross_va = Mask::keys_valid(tv, audio_valid);

    for (const EncoderBlockT<S>& blk : enc_blocks_) {
      TensorT<S> a_ln = layer_norm(a, blk.self_ln_a.gain, blk.self_ln_a.bias);
      TensorT<S> a_bar = add(a, drop(multi_head_attention(a_ln, a_ln, a_ln, blk.self_a, cfg_.heads, &self_a), ctx));
      TensorT<S> v_ln = layer_norm(v, blk.self_ln_v.gain, blk.self_ln_v.bias);
      TensorT<S> v_bar = add(v, drop(multi_head_attention(v_ln, v_ln, v_ln, blk.self_v, cfg_.heads, &self_v), ctx));
      // Cross attention reads the other modality's post-self-attention state.
      TensorT<S> v_bar_kv = layer_norm(v_bar, blk.cross_ln_kv_a.gain, blk.cross_ln_kv_a.bias);
      TensorT<S> a_tilde =
          add(a_bar, drop(multi_head_attention(layer_norm(a_bar, blk.cross_ln_q_a.gain, blk.cross_ln_q_a.bias),
                                               v_bar_kv, v_bar_kv, blk.cross_a, cfg_.heads, &cross_av),
                          ctx));
      TensorT<S> a_bar_kv = layer_norm(a_bar, blk.cross_ln_kv_v.gain, blk.cross_ln_kv_v.bias);
      TensorT<S> v_tilde =
          add(v_bar, drop(multi_head_attention(layer_norm(v_bar, blk.cross_ln_q_v.gain, blk.cross_ln_q_v.bias),
                                               a_bar_kv, a_bar_kv, blk.cross_v, cfg_.heads, &cross_va),
                          ctx));
      a = add(a_tilde, drop(apply_ffn(layer_norm(a_tilde, blk.ffn_ln_a.gain, blk.ffn_ln_a.bias), blk.ffn_a), ctx));
      v = add(v_tilde, drop(apply_ffn(layer_norm(v_tilde, blk.ffn_ln_v.gain, blk.ffn_ln_v.bias), blk.ffn_v), ctx));
    }

    EncodingsT<S> enc;
    enc.audio = layer_norm(a, enc_out_ln_a_.gain, enc_out_ln_a_.bias);
    enc.visual = layer_norm(v, enc_out_ln_v_.gain, enc_out_ln_v_.bias);
    enc.audio_valid = std::move(audio_valid);
    enc.visual_valid = std::move(visual_valid);
    return enc;
  }

  // ---- End detector ------------------------------------------------------

  // Probability that a relevant caption can already be generated from the
  // encoded prefix. Padded rows are zeroed again after every convolution so
  // each layer sees the same zeros an unpadded sequence is bordered by, and
  // the pooling covers only real frames; padding cannot move the result.
  TensorT<S> detect_end(const EncodingsT<S>& enc, ForwardCtx ctx = {}) const {
    if (enc.audio.numel() == 0 || enc.visual.numel() == 0)
      throw ContractError("detect_end: encodings must be nonempty on both modalities");
    TensorT<S> a = mask_rows(enc.audio, enc.audio_valid);
    TensorT<S> v = mask_rows(enc.visual, enc.visual_valid);
    TensorT<S> ac = conv_layer(mask_rows(relu(conv_layer(a, det_.conv_a1)), enc.audio_valid), det_.conv_a2);
    TensorT<S> vc = conv_layer(mask_rows(relu(conv_layer(v, det_.conv_v1)), enc.visual_valid), det_.conv_v2);
    TensorT<S> pooled = concat_cols(mean_pool(ac, &enc.audio_valid), mean_pool(vc, &enc.visual_valid));
    TensorT<S> h = drop(as_row(pooled), ctx);
    return sigmoid(apply_ffn(h, det_.ffn));
  }

  // ---- Decoder -----------------------------------------------------------

  // One pass over `input_ids` (must begin with <sos>); row i holds the logits
  // for the word following position i.
  TensorT<S> decode_logits(const std::vector<int>& input_ids, const EncodingsT<S>& enc, ForwardCtx ctx = {}) const {
    if (input_ids.empty() || input_ids.front() != kSosId)
      throw ContractError("decode: input must begin with the start token");
    if (input_ids.size() > cfg_.max_decode_len + 1)
      throw ContractError("decode: prefix longer than max_decode_len");
    for (int id : input_ids)
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
        throw ContractError("decode: token id " + std::to_string(id) + " outside vocabulary");
    const std::size_t len = input_ids.size();
    TensorT<S> y = add(scale(embedding(embed_, input_ids), static_cast<S>(std::sqrt(double(cfg_.d_embed)))),
                       detail::sinusoidal_encoding<S>(len, cfg_.d_embed));
    const Mask causal = Mask::causal(len);
    const Mask src_a = Mask::keys_valid(len, enc.audio_valid);
    const Mask src_v = Mask::keys_valid(len, enc.visual_valid);
    for (const DecoderBlockT<S>& blk : dec_blocks_) {
      TensorT<S> y_ln = layer_norm(y, blk.self_ln.gain, blk.self_ln.bias);
      TensorT<S> y_bar = add(y, drop(multi_head_attention(y_ln, y_ln, y_ln, blk.self_attn, cfg_.heads, &causal), ctx));
      TensorT<S> q_a = layer_norm(y_bar, blk.src_ln_a.gain, blk.src_ln_a.bias);
      TensorT<S> y_a =
          add(y_bar, drop(multi_head_attention(q_a, enc.audio, enc.audio, blk.src_a, cfg_.heads, &src_a), ctx));
      TensorT<S> q_v = layer_norm(y_bar, blk.src_ln_v.gain, blk.src_ln_v.bias);
      TensorT<S> y_v =
          add(y_bar, drop(multi_head_attention(q_v, enc.visual, enc.visual, blk.src_v, cfg_.heads, &src_v), ctx));
      TensorT<S> fused = linear(concat_cols(y_a, y_v), blk.fuse_w, blk.fuse_b);
      y = add(fused, drop(apply_ffn(layer_norm(fused, blk.ffn_ln.gain, blk.ffn_ln.bias), blk.ffn), ctx));
    }
    y = layer_norm(y, dec_out_ln_.gain, dec_out_ln_.bias);
    return linear(y, out_w_, out_b_);
  }

  // Next-word distribution after the given prefix (prefix includes <sos>).
  std::vector<S> decode_step(const std::vector<int>& prefix, const EncodingsT<S>& enc) const {
    NoGradGuard ng;
    TensorT<S> logits = decode_logits(prefix, enc);
    TensorT<S> probs = softmax(logits);
    const std::size_t v = cfg_.vocab_size;
    std::vector<S> row(v);
    for (std::size_t j = 0; j < v; ++j) row[j] = probs.at(logits.rows() - 1, j);
    return row;
  }

  // Teacher-forced pass over a reference caption (without <sos>/<eos>).
  // Yields reference_len + 1 positions; the final one predicts <eos>.
  ForcedResultT<S> teacher_forced_predictions(const std::vector<int>& reference, const EncodingsT<S>& enc,
                                              ForwardCtx ctx = {}) const {
    if (reference.empty()) throw ContractError("teacher_forced_predictions: empty reference");
    if (reference.size() > cfg_.max_decode_len)
      throw ContractError("teacher_forced_predictions: reference longer than max_decode_len");
    std::vector<int> input;
    input.reserve(reference.size() + 1);
    input.push_back(kSosId);
    input.insert(input.end(), reference.begin(), reference.end());
    ForcedResultT<S> res;
    res.logits = decode_logits(input, enc, ctx);
    TensorT<S> probs;
    {
      NoGradGuard ng;
      probs = softmax(res.logits);
    }
    const std::size_t rows = probs.rows(), v = probs.cols();
    res.distributions.resize(rows);
    res.argmax.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      res.distributions[r].assign(probs.data->begin() + r * v, probs.data->begin() + (r + 1) * v);
      std::size_t best = 0;
      for (std::size_t j = 1; j < v; ++j)
        if (res.distributions[r][j] > res.distributions[r][best]) best = j;
      res.argmax[r] = static_cast<int>(best);
    }
    return res;
  }

  // Iterated argmax decoding from <sos>; stops at <eos> or max_decode_len.
  // The returned sequence carries neither <sos> nor <eos>.
  std::vector<int> greedy_decode(const EncodingsT<S>& enc) const {
    NoGradGuard ng;
    std::vector<int> prefix{kSosId};
    std::vector<int> out;
    for (std::size_t step = 0; step < cfg_.max_decode_len; ++step) {
      std::vector<S> dist = decode_step(prefix, enc);
      std::size_t best = 0;
      for (std::size_t j = 1; j < dist.size(); ++j)
        if (dist[j] > dist[best]) best = j;
      if (static_cast<int>(best) == kEosId) break;
      out.push_back(static_cast<int>(best));
      prefix.push_back(static_cast<int>(best));
    }
    return out;
  }

  // Beam decoding over this model's next-word distributions; see beam_search
  // for the exact semantics.
  std::vector<int> beam_decode(const EncodingsT<S>& enc, std::size_t width) const {
    if (width == 0) throw ConfigError("beam_decode: width must be >= 1");
    NoGradGuard ng;
    auto next = [&](const std::vector<int>& prefix_with_sos) {
      std::vector<S> dist = decode_step(prefix_with_sos, enc);
      std::vector<double> logp(dist.size());
      for (std::size_t j = 0; j < dist.size(); ++j) logp[j] = std::log(std::max(1e-30, double(dist[j])));
      return logp;
    };
    return beam_search(next, width, cfg_.max_decode_len);
  }

 private:
  TensorT<S> drop(const TensorT<S>& x, ForwardCtx ctx) const {
    return dropout(x, cfg_.dropout, ctx.rng, ctx.drop());
  }

  static TensorT<S> apply_ffn(const TensorT<S>& x, const FfnT<S>& f) {
    return linear(relu(linear(x, f.w1, f.b1)), f.w2, f.b2);
  }

  TensorT<S> conv_layer(const TensorT<S>& x, const Conv1dT<S>& c) const {
    return add_rowwise(conv1d(x, c.kernels, /*same_padding=*/true), c.bias);
  }

  // Zero out padded rows so later convolutions see the same values as an
  // unpadded sequence bordered by zeros.
  static TensorT<S> mask_rows(const TensorT<S>& x, const std::vector<std::uint8_t>& valid) {
    bool all = true;
    for (std::uint8_t b : valid) all = all && b;
    if (all) return x;
    TensorT<S> m = TensorT<S>::zeros(x.dims);
    for (std::size_t r = 0; r < x.dims[0]; ++r)
      if (valid[r])
        for (std::size_t c = 0; c < x.dims[1]; ++c) (*m.data)[r * x.dims[1] + c] = S(1);
    return hadamard(x, m);
  }

  // ---- Parameter construction -------------------------------------------

  TensorT<S> make_param(const std::string& name, std::vector<std::size_t> dims, Rng& rng, bool zero = false) {
    if (index_.count(name)) throw ContractError("model: duplicate parameter name " + name);
    TensorT<S> t = TensorT<S>::zeros(dims, /*requires_grad=*/true);
    if (!zero) {
      std::size_t fan_in = dims.size() >= 2 ? dims[dims.size() - 2] : dims[0];
      std::size_t fan_out = dims.back();
      if (dims.size() == 3) {  // conv kernels [W x Din x Dout]
        fan_in = dims[0] * dims[1];
        fan_out = dims[0] * dims[2];
      }
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (S& v : *t.data) v = static_cast<S>(rng.uniform(-limit, limit));
    }
    index_[name] = params_.size();
    params_.emplace_back(name, t);
    return t;
  }

  LayerNormT<S> make_ln(const std::string& prefix, std::size_t d, Rng& rng) {
    LayerNormT<S> ln;
    ln.gain = make_param(prefix + ".gain", {d}, rng, /*zero=*/true);
    for (S& v : *ln.gain.data) v = S(1);
    ln.bias = make_param(prefix + ".bias", {d}, rng, /*zero=*/true);
    return ln;
  }

  AttentionWeightsT<S> make_attn(const std::string& prefix, std::size_t dq, std::size_t dk, std::size_t dv,
                                 std::size_t dm, Rng& rng) {
    AttentionWeightsT<S> w;
    w.wq = make_param(prefix + ".wq", {dq, dm}, rng);
    w.bq = make_param(prefix + ".bq", {dm}, rng, true);
    w.wk = make_param(prefix + ".wk", {dk, dm}, rng);
    w.bk = make_param(prefix + ".bk", {dm}, rng, true);
    w.wv = make_param(prefix + ".wv", {dv, dm}, rng);
    w.bv = make_param(prefix + ".bv", {dm}, rng, true);
    w.wo = make_param(prefix + ".wo", {dm, dm}, rng);
    w.bo = make_param(prefix + ".bo", {dm}, rng, true);
    return w;
  }

  FfnT<S> make_ffn(const std::string& prefix, std::size_t d_in, std::size_t hidden, std::size_t d_out, Rng& rng) {
    FfnT<S> f;
    f.w1 = make_param(prefix + ".w1", {d_in, hidden}, rng);
    f.b1 = make_param(prefix + ".b1", {hidden}, rng, true);
    f.w2 = make_param(prefix + ".w2", {hidden, d_out}, rng);
    f.b2 = make_param(prefix + ".b2", {d_out}, rng, true);
    return f;
  }

  Conv1dT<S> make_conv(const std::string& prefix, std::size_t w, std::size_t din, std::size_t dout, Rng& rng) {
    Conv1dT<S> c;
    c.kernels = make_param(prefix + ".k", {w, din, dout}, rng);
    c.bias = make_param(prefix + ".b", {dout}, rng, true);
    return c;
  }

  void build(Rng& rng) {
    const std::size_t da = cfg_.d_audio, dv = cfg_.d_visual, de = cfg_.d_embed;
    for (std::size_t i = 0; i < cfg_.enc_blocks; ++i) {
      const std::string p = "enc" + std::to_string(i);
      EncoderBlockT<S> blk;
      blk.self_ln_a = make_ln(p + ".a.self_ln", da, rng);
      blk.self_a = make_attn(p + ".a.self", da, da, da, da, rng);
      blk.self_ln_v = make_ln(p + ".v.self_ln", dv, rng);
      blk.self_v = make_attn(p + ".v.self", dv, dv, dv, dv, rng);
      blk.cross_ln_q_a = make_ln(p + ".a.cross_ln_q", da, rng);
      blk.cross_ln_kv_a = make_ln(p + ".a.cross_ln_kv", dv, rng);
      blk.cross_a = make_attn(p + ".a.cross", da, dv, dv, da, rng);
      blk.cross_ln_q_v = make_ln(p + ".v.cross_ln_q", dv, rng);
      blk.cross_ln_kv_v = make_ln(p + ".v.cross_ln_kv", da, rng);
      blk.cross_v = make_attn(p + ".v.cross", dv, da, da, dv, rng);
      blk.ffn_ln_a = make_ln(p + ".a.ffn_ln", da, rng);
      blk.ffn_a = make_ffn(p + ".a.ffn", da, cfg_.ffn_audio, da, rng);
      blk.ffn_ln_v = make_ln(p + ".v.ffn_ln", dv, rng);
      blk.ffn_v = make_ffn(p + ".v.ffn", dv, cfg_.ffn_visual, dv, rng);
      enc_blocks_.push_back(std::move(blk));
    }
    enc_out_ln_a_ = make_ln("enc_out.a_ln", da, rng);
    enc_out_ln_v_ = make_ln("enc_out.v_ln", dv, rng);

    det_.conv_a1 = make_conv("det.conv_a1", cfg_.det_kernel, da, cfg_.det_channels, rng);
    det_.conv_a2 = make_conv("det.conv_a2", cfg_.det_kernel, cfg_.det_channels, cfg_.det_channels, rng);
    det_.conv_v1 = make_conv("det.conv_v1", cfg_.det_kernel, dv, cfg_.det_channels, rng);
    det_.conv_v2 = make_conv("det.conv_v2", cfg_.det_kernel, cfg_.det_channels, cfg_.det_channels, rng);
    det_.ffn = make_ffn("det.ffn", 2 * cfg_.det_channels, cfg_.det_ffn_hidden, 1, rng);
    // Prior-odds bias: an untrained detector reports a low probability
    // instead of hovering at 0.5, so it cannot fire before it has learned.
    (*det_.ffn.b2.data)[0] = S(-4);

    embed_ = make_param("dec.embed", {cfg_.vocab_size, de}, rng);
    for (std::size_t i = 0; i < cfg_.dec_blocks; ++i) {
      const std::string p = "dec" + std::to_string(i);
      DecoderBlockT<S> blk;
      blk.self_ln = make_ln(p + ".self_ln", de, rng);
      blk.self_attn = make_attn(p + ".self", de, de, de, de, rng);
      blk.src_ln_a = make_ln(p + ".src_a_ln", de, rng);
      blk.src_a = make_attn(p + ".src_a", de, da, da, de, rng);
      blk.src_ln_v = make_ln(p + ".src_v_ln", de, rng);
      blk.src_v = make_attn(p + ".src_v", de, dv, dv, de, rng);
      blk.fuse_w = make_param(p + ".fuse.w", {2 * de, de}, rng);
      blk.fuse_b = make_param(p + ".fuse.b", {de}, rng, true);
      blk.ffn_ln = make_ln(p + ".ffn_ln", de, rng);
      blk.ffn = make_ffn(p + ".ffn", de, cfg_.ffn_decoder, de, rng);
      dec_blocks_.push_back(std::move(blk));
    }
    dec_out_ln_ = make_ln("dec_out.ln", de, rng);
    out_w_ = make_param("dec_out.proj.w", {de, cfg_.vocab_size}, rng);
    out_b_ = make_param("dec_out.proj.b", {cfg_.vocab_size}, rng, true);
  }

  ModelConfig cfg_;
  std::vector<std::pair<std::string, TensorT<S>>> params_;
  std::map<std::string, std::size_t> index_;

  std::vector<EncoderBlockT<S>> enc_blocks_;
  LayerNormT<S> enc_out_ln_a_, enc_out_ln_v_;
  DetectorT<S> det_;
  TensorT<S> embed_;
  std::vector<DecoderBlockT<S>> dec_blocks_;
  LayerNormT<S> dec_out_ln_;
  TensorT<S> out_w_, out_b_;
};

using Model = ModelT<float>;
using Tensor = TensorT<float>;
using Encodings = EncodingsT<float>;
using ForcedResult = ForcedResultT<float>;

}  // namespace avcap

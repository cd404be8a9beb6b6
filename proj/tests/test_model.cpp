#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "avcap/checkpoint.hpp"
#include "avcap/grad_check.hpp"
#include "avcap/io_util.hpp"
#include "avcap/losses.hpp"
#include "avcap/model.hpp"

using namespace avcap;

// ---------------------------------------------------------------------------
// Plain-loop reference implementation, independent of the graph machinery.
// Everything below works on std::vector<std::vector<double>> and recomputes
// the architecture definition directly.
// ---------------------------------------------------------------------------
namespace ref {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

template <typename S>
Mat mat_of(const TensorT<S>& t) {
  Mat m(t.dims[0], Vec(t.dims[1]));
  for (std::size_t r = 0; r < t.dims[0]; ++r)
    for (std::size_t c = 0; c < t.dims[1]; ++c) m[r][c] = static_cast<double>(t.at(r, c));
  return m;
}

template <typename S>
Vec vec_of(const TensorT<S>& t) {
  Vec v(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) v[i] = static_cast<double>(t.at(i));
  return v;
}

Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[0].size(); ++c) out[r][c] += b[r][c];
  return out;
}

Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat linear(const Mat& x, const Mat& w, const Vec& b) {
  Mat out = matmul(x, w);
  for (auto& row : out)
    for (std::size_t c = 0; c < b.size(); ++c) row[c] += b[c];
  return out;
}

Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, double eps = 1e-5) {
  Mat out = x;
  const std::size_t d = x[0].size();
  for (auto& row : out) {
    double mean = 0;
    for (double v : row) mean += v;
    mean /= d;
    double var = 0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= d;
    for (std::size_t c = 0; c < d; ++c) row[c] = (row[c] - mean) / std::sqrt(var + eps) * gain[c] + bias[c];
  }
  return out;
}

struct AttnW {
  Mat wq, wk, wv, wo;
  Vec bq, bk, bv, bo;
};

template <typename S>
AttnW attn_of(ModelT<S>& m, const std::string& p) {
  return {mat_of(m.param(p + ".wq")), mat_of(m.param(p + ".wk")), mat_of(m.param(p + ".wv")),
          mat_of(m.param(p + ".wo")), vec_of(m.param(p + ".bq")), vec_of(m.param(p + ".bk")),
          vec_of(m.param(p + ".bv")), vec_of(m.param(p + ".bo"))};
}

// mask(i, j) -> may query i attend to key j
template <typename MaskFn>
Mat attention(const Mat& q_in, const Mat& kv_in, const AttnW& w, std::size_t heads, MaskFn mask) {
  const Mat q = linear(q_in, w.wq, w.bq);
  const Mat k = linear(kv_in, w.wk, w.bk);
  const Mat v = linear(kv_in, w.wv, w.bv);
  const std::size_t dm = q[0].size(), dh = dm / heads;
  Mat merged(q.size(), Vec(dm, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      Vec scores(k.size(), -1e300);
      double mx = -1e300;
      for (std::size_t j = 0; j < k.size(); ++j) {
        if (!mask(i, j)) continue;
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
        scores[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[j]);
      }
      double z = 0;
      Vec weights(k.size(), 0.0);
      for (std::size_t j = 0; j < k.size(); ++j)
        if (mask(i, j)) z += weights[j] = std::exp(scores[j] - mx);
      for (std::size_t j = 0; j < k.size(); ++j) {
        if (weights[j] == 0.0) continue;
        const double a = weights[j] / z;
        for (std::size_t c = 0; c < dh; ++c) merged[i][h * dh + c] += a * v[j][h * dh + c];
      }
    }
  }
  return linear(merged, w.wo, w.bo);
}

Mat relu(const Mat& x) {
  Mat out = x;
  for (auto& row : out)
    for (double& v : row) v = std::max(0.0, v);
  return out;
}

template <typename S>
Mat ffn(ModelT<S>& m, const std::string& p, const Mat& x) {
  return linear(relu(linear(x, mat_of(m.param(p + ".w1")), vec_of(m.param(p + ".b1")))),
                mat_of(m.param(p + ".w2")), vec_of(m.param(p + ".b2")));
}

template <typename S>
Mat ln(ModelT<S>& m, const std::string& p, const Mat& x) {
  return layer_norm(x, vec_of(m.param(p + ".gain")), vec_of(m.param(p + ".bias")));
}

Mat positional(std::size_t len, std::size_t dim) {
  Mat pe(len, Vec(dim));
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double angle = t / std::pow(10000.0, double(2 * (i / 2)) / double(dim));
      pe[t][i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

auto all_ok = [](std::size_t, std::size_t) { return true; };

// Full encoder recomputation from the block equations.
template <typename S>
std::pair<Mat, Mat> encode(ModelT<S>& m, Mat a, Mat v) {
  const ModelConfig& cfg = m.config();
  for (auto& row : a)
    for (double& x : row) x *= std::sqrt(double(cfg.d_audio));
  for (auto& row : v)
    for (double& x : row) x *= std::sqrt(double(cfg.d_visual));
  a = add(a, positional(a.size(), cfg.d_audio));
  v = add(v, positional(v.size(), cfg.d_visual));
  for (std::size_t i = 0; i < cfg.enc_blocks; ++i) {
    const std::string p = "enc" + std::to_string(i);
    Mat a_ln = ln(m, p + ".a.self_ln", a);
    Mat a_bar = add(a, attention(a_ln, a_ln, attn_of(m, p + ".a.self"), cfg.heads, all_ok));
    Mat v_ln = ln(m, p + ".v.self_ln", v);
    Mat v_bar = add(v, attention(v_ln, v_ln, attn_of(m, p + ".v.self"), cfg.heads, all_ok));
    Mat a_tilde = add(a_bar, attention(ln(m, p + ".a.cross_ln_q", a_bar), ln(m, p + ".a.cross_ln_kv", v_bar),
                                       attn_of(m, p + ".a.cross"), cfg.heads, all_ok));
    Mat v_tilde = add(v_bar, attention(ln(m, p + ".v.cross_ln_q", v_bar), ln(m, p + ".v.cross_ln_kv", a_bar),
                                       attn_of(m, p + ".v.cross"), cfg.heads, all_ok));
    a = add(a_tilde, ffn(m, p + ".a.ffn", ln(m, p + ".a.ffn_ln", a_tilde)));
    v = add(v_tilde, ffn(m, p + ".v.ffn", ln(m, p + ".v.ffn_ln", v_tilde)));
  }
  return {ln(m, "enc_out.a_ln", a), ln(m, "enc_out.v_ln", v)};
}

// Decoder pass; returns the next-word distribution at every position.
template <typename S>
Mat decode(ModelT<S>& m, const std::vector<int>& input_ids, const Mat& enc_a, const Mat& enc_v) {
  const ModelConfig& cfg = m.config();
  const Mat table = mat_of(m.param("dec.embed"));
  Mat y(input_ids.size(), Vec(cfg.d_embed));
  for (std::size_t r = 0; r < input_ids.size(); ++r)
    for (std::size_t c = 0; c < cfg.d_embed; ++c)
      y[r][c] = table[input_ids[r]][c] * std::sqrt(double(cfg.d_embed));
  y = add(y, positional(y.size(), cfg.d_embed));
  auto causal = [](std::size_t i, std::size_t j) { return j <= i; };
  for (std::size_t i = 0; i < cfg.dec_blocks; ++i) {
    const std::string p = "dec" + std::to_string(i);
    Mat y_ln = ln(m, p + ".self_ln", y);
    Mat y_bar = add(y, attention(y_ln, y_ln, attn_of(m, p + ".self"), cfg.heads, causal));
    Mat y_a = add(y_bar, attention(ln(m, p + ".src_a_ln", y_bar), enc_a, attn_of(m, p + ".src_a"), cfg.heads, all_ok));
    Mat y_v = add(y_bar, attention(ln(m, p + ".src_v_ln", y_bar), enc_v, attn_of(m, p + ".src_v"), cfg.heads, all_ok));
    Mat cat(y.size(), Vec(2 * cfg.d_embed));
    for (std::size_t r = 0; r < y.size(); ++r) {
      for (std::size_t c = 0; c < cfg.d_embed; ++c) cat[r][c] = y_a[r][c];
      for (std::size_t c = 0; c < cfg.d_embed; ++c) cat[r][cfg.d_embed + c] = y_v[r][c];
    }
    Mat fused = linear(cat, mat_of(m.param(p + ".fuse.w")), vec_of(m.param(p + ".fuse.b")));
    y = add(fused, ffn(m, p + ".ffn", ln(m, p + ".ffn_ln", fused)));
  }
  y = ln(m, "dec_out.ln", y);
  Mat logits = linear(y, mat_of(m.param("dec_out.proj.w")), vec_of(m.param("dec_out.proj.b")));
  for (auto& row : logits) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0;
    for (double& v : row) z += v = std::exp(v - mx);
    for (double& v : row) v /= z;
  }
  return logits;
}

}  // namespace ref

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.enc_blocks = 1;
  cfg.dec_blocks = 1;
  cfg.heads = 2;
  cfg.d_audio = 4;
  cfg.d_visual = 6;
  cfg.d_embed = 6;
  cfg.ffn_audio = 8;
  cfg.ffn_visual = 8;
  cfg.ffn_decoder = 8;
  cfg.det_channels = 5;
  cfg.det_kernel = 3;
  cfg.det_ffn_hidden = 6;
  cfg.vocab_size = 6;
  cfg.dropout = 0.0;
  cfg.max_decode_len = 8;
  return cfg;
}

template <typename S>
TensorT<S> random_features(std::size_t t, std::size_t d, Rng& rng) {
  TensorT<S> x = TensorT<S>::zeros({t, d});
  for (S& v : *x.data) v = static_cast<S>(rng.uniform(-1, 1));
  return x;
}

}  // namespace

TEST_CASE("encoder preserves shapes and matches the plain-loop reference") {
  ModelT<double> model(tiny_config(), 404);
  Rng rng(7);
  TensorT<double> a = random_features<double>(3, 4, rng);
  TensorT<double> v = random_features<double>(2, 6, rng);
  EncodingsT<double> enc = model.encode(a, v);
  CHECK(enc.audio.dims == std::vector<std::size_t>{3, 4});
  CHECK(enc.visual.dims == std::vector<std::size_t>{2, 6});

  auto [ra, rv] = ref::encode(model, ref::mat_of(a), ref::mat_of(v));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(enc.audio.at(r, c) == doctest::Approx(ra[r][c]).epsilon(1e-9));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 6; ++c) CHECK(enc.visual.at(r, c) == doctest::Approx(rv[r][c]).epsilon(1e-9));
}

TEST_CASE("single-block identity projections reduce to positional input plus plain attention") {
  ModelConfig cfg = tiny_config();
  cfg.heads = 1;
  cfg.d_audio = 2;
  cfg.d_visual = 2;
  ModelT<double> model(cfg, 11);
  // Identity projections, zero FFNs, unit layer norms.
  for (auto& [name, t] : model.parameters()) {
    if (name.rfind("enc", 0) != 0) continue;
    const bool is_mat = t.rank() == 2;
    for (double& val : *t.data) val = 0.0;
    if (name.find(".gain") != std::string::npos)
      for (double& val : *t.data) val = 1.0;
    if (is_mat && (name.find(".wq") != std::string::npos || name.find(".wk") != std::string::npos ||
                   name.find(".wv") != std::string::npos || name.find(".wo") != std::string::npos))
      for (std::size_t i = 0; i < t.dims[0]; ++i) t.at(i, i) = 1.0;
  }
  Rng rng(3);
  TensorT<double> a = random_features<double>(2, 2, rng);
  TensorT<double> v = random_features<double>(2, 2, rng);
  EncodingsT<double> enc = model.encode(a, v);
  auto [ra, rv] = ref::encode(model, ref::mat_of(a), ref::mat_of(v));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(enc.audio.at(r, c) == doctest::Approx(ra[r][c]).epsilon(1e-9));
      CHECK(enc.visual.at(r, c) == doctest::Approx(rv[r][c]).epsilon(1e-9));
    }
}

TEST_CASE("appending masked padding frames leaves real positions unchanged") {
  Model model(tiny_config(), 99);
  Rng rng(5);
  Tensor a = random_features<float>(3, 4, rng);
  Tensor v = random_features<float>(2, 6, rng);
  Encodings plain = model.encode(a, v);
  float p_plain;
  {
    Encodings e2 = model.encode(a, v);
    p_plain = model.detect_end(e2).at(0);
  }

  Tensor a_pad = Tensor::zeros({5, 4});
  std::copy(a.data->begin(), a.data->end(), a_pad.data->begin());
  Tensor v_pad = Tensor::zeros({4, 6});
  std::copy(v.data->begin(), v.data->end(), v_pad.data->begin());
  Encodings padded = model.encode(a_pad, v_pad, {}, {1, 1, 1, 0, 0}, {1, 1, 0, 0});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(padded.audio.at(r, c) == doctest::Approx(plain.audio.at(r, c)).epsilon(1e-6));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 6; ++c)
      CHECK(padded.visual.at(r, c) == doctest::Approx(plain.visual.at(r, c)).epsilon(1e-6));

  // The detector pools only real frames, so padding cannot move it.
  const float p_padded = model.detect_end(padded).at(0);
  CHECK(p_padded == doctest::Approx(p_plain).epsilon(1e-6));
}

TEST_CASE("detector probability: sigmoid(0) exactly at zeroed output layer, (0,1) otherwise") {
  Model model(tiny_config(), 123);
  Rng rng(17);
  Encodings enc = model.encode(random_features<float>(4, 4, rng), random_features<float>(3, 6, rng));
  float p = model.detect_end(enc).at(0);
  CHECK(p > 0.0f);
  CHECK(p < 1.0f);

  for (float& v : *model.param("det.ffn.w2").data) v = 0.0f;
  for (float& v : *model.param("det.ffn.b2").data) v = 0.0f;
  CHECK(model.detect_end(enc).at(0) == 0.5f);
}

TEST_CASE("decoder distributions: sum to one, causal, and match the reference") {
  ModelT<double> model(tiny_config(), 31);
  Rng rng(19);
  EncodingsT<double> enc = model.encode(random_features<double>(3, 4, rng), random_features<double>(2, 6, rng));

  std::vector<double> dist = model.decode_step({kSosId, 4, 5}, enc);
  CHECK(dist.size() == 6);
  double sum = 0;
  for (double p : dist) sum += p;
  CHECK(std::fabs(sum - 1.0) < 1e-6);

  // Causality: swapping a later token cannot move earlier distributions.
  ForcedResultT<double> f1 = model.teacher_forced_predictions({4, 4, 5}, enc);
  ForcedResultT<double> f2 = model.teacher_forced_predictions({4, 4, 3}, enc);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 6; ++j) CHECK(f1.distributions[r][j] == f2.distributions[r][j]);

  ref::Mat probs = ref::decode(model, {kSosId, 4, 4, 5}, ref::mat_of(enc.audio), ref::mat_of(enc.visual));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 6; ++j) CHECK(f1.distributions[r][j] == doctest::Approx(probs[r][j]).epsilon(1e-9));

  CHECK_THROWS_AS(model.decode_step({kSosId, 9}, enc), ContractError);
  CHECK_THROWS_AS(model.decode_step({4, 5}, enc), ContractError);
}

TEST_CASE("teacher forcing agrees with a per-position decode_step loop") {
  ModelT<double> model(tiny_config(), 77);
  Rng rng(23);
  EncodingsT<double> enc = model.encode(random_features<double>(2, 4, rng), random_features<double>(2, 6, rng));
  const std::vector<int> reference{5, 4, 4};
  ForcedResultT<double> forced = model.teacher_forced_predictions(reference, enc);
  CHECK(forced.distributions.size() == reference.size() + 1);
  std::vector<int> prefix{kSosId};
  for (std::size_t pos = 0; pos < reference.size() + 1; ++pos) {
    std::vector<double> dist = model.decode_step(prefix, enc);
    for (std::size_t j = 0; j < dist.size(); ++j)
      CHECK(forced.distributions[pos][j] == doctest::Approx(dist[j]).epsilon(1e-9));
    std::size_t best = 0;
    for (std::size_t j = 1; j < dist.size(); ++j)
      if (dist[j] > dist[best]) best = j;
    CHECK(forced.argmax[pos] == static_cast<int>(best));
    if (pos < reference.size()) prefix.push_back(reference[pos]);
  }
  CHECK_THROWS_AS(model.teacher_forced_predictions({}, enc), ContractError);
  CHECK_THROWS_AS(model.teacher_forced_predictions(std::vector<int>(20, 4), enc), ContractError);
}

TEST_CASE("greedy decoding: forced <eos> first yields an empty caption, beam width 1 is identical") {
  Model model(tiny_config(), 55);
  Rng rng(29);
  Encodings enc = model.encode(random_features<float>(3, 4, rng), random_features<float>(2, 6, rng));

  std::vector<int> greedy = model.greedy_decode(enc);
  CHECK(greedy.size() <= model.config().max_decode_len);
  CHECK(model.greedy_decode(enc) == greedy);  // deterministic
  CHECK(model.beam_decode(enc, 1) == greedy);

  for (float& v : *model.param("dec_out.proj.w").data) v = 0.0f;
  for (float& v : *model.param("dec_out.proj.b").data) v = 0.0f;
  model.param("dec_out.proj.b").at(kEosId) = 10.0f;
  CHECK(model.greedy_decode(enc).empty());

  CHECK_THROWS_AS(model.beam_decode(enc, 0), ConfigError);
}

TEST_CASE("beam search: dominance over greedy and exhaustive-enumeration agreement") {
  ModelConfig cfg = tiny_config();
  cfg.max_decode_len = 2;  // short horizon keeps full enumeration feasible
  ModelT<double> model(cfg, 817);
  Rng rng(37);
  EncodingsT<double> enc = model.encode(random_features<double>(2, 4, rng), random_features<double>(2, 6, rng));

  auto normalized_score = [&](const std::vector<int>& tokens) {
    // Score of the emitted sequence plus its terminator, per generated token.
    std::vector<int> prefix{kSosId};
    double logp = 0.0;
    std::size_t len = 0;
    for (int t : tokens) {
      logp += std::log(model.decode_step(prefix, enc)[static_cast<std::size_t>(t)]);
      prefix.push_back(t);
      ++len;
    }
    if (tokens.size() < cfg.max_decode_len) {
      logp += std::log(model.decode_step(prefix, enc)[kEosId]);
      ++len;
    }
    return logp / static_cast<double>(len);
  };

  // All emittable captions of length <= 2 (tokens other than <eos>).
  std::vector<std::vector<int>> candidates{{}};
  for (int t1 = 0; t1 < 6; ++t1) {
    if (t1 == kEosId) continue;
    candidates.push_back({t1});
    for (int t2 = 0; t2 < 6; ++t2)
      if (t2 != kEosId) candidates.push_back({t1, t2});
  }
  std::vector<int> best;
  double best_score = -1e300;
  for (const auto& cand : candidates) {
    const double s = normalized_score(cand);
    if (s > best_score) {
      best_score = s;
      best = cand;
    }
  }

  // A beam wide enough to hold every second-step expansion is exhaustive.
  CHECK(model.beam_decode(enc, 30) == best);

  const double greedy_score = normalized_score(model.greedy_decode(enc));
  for (std::size_t width : {1u, 2u, 3u}) {
    const double beam_score = normalized_score(model.beam_decode(enc, width));
    CHECK(beam_score >= greedy_score - 1e-12);
  }
}

TEST_CASE("checkpoint round-trip reproduces every parameter bit-exactly") {
  const auto path = std::filesystem::temp_directory_path() / "avcap_test_ckpt.avck";
  Model model(tiny_config(), 2024);
  save_checkpoint(path, model);
  std::unique_ptr<Model> loaded = load_checkpoint(path);
  REQUIRE(loaded->parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(loaded->parameters()[i].first == model.parameters()[i].first);
    CHECK(*loaded->parameters()[i].second.data == *model.parameters()[i].second.data);
  }
  // Byte-identical when re-saved.
  const auto path2 = std::filesystem::temp_directory_path() / "avcap_test_ckpt2.avck";
  save_checkpoint(path2, *loaded);
  CHECK(read_text_file(path) == read_text_file(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("composite encoder+detector+decoder loss passes the gradient check") {
  ModelConfig cfg = tiny_config();
  ModelT<double> model(cfg, 3141);
  Rng rng(43);
  TensorT<double> a = random_features<double>(3, 4, rng);
  TensorT<double> v = random_features<double>(2, 6, rng);
  const std::vector<int> caption{4, 5};

  auto loss_fn = [&]() {
    EncodingsT<double> enc = model.encode(a, v);
    ForcedResultT<double> forced = model.teacher_forced_predictions(caption, enc);
    std::vector<int> targets = caption;
    targets.push_back(kEosId);
    TensorT<double> ce = caption_ce_loss(forced.logits, targets, 0.0);
    TensorT<double> bce = binary_cross_entropy(model.detect_end(enc), 1);
    return add(ce, bce);
  };

  // Representative parameters from every stage of the pipeline.
  for (const char* name :
       {"enc0.a.self.wq", "enc0.v.cross.wk", "enc0.a.ffn.w1", "enc_out.v_ln.gain", "det.conv_a1.k", "det.ffn.w2",
        "dec.embed", "dec0.src_v.wv", "dec0.fuse.w", "dec_out.proj.w"}) {
    TensorT<double>& p = model.param(name);
    const double err = grad_check([&](const TensorT<double>&) { return loss_fn(); }, p, 1e-6);
    INFO("parameter ", name);
    CHECK(err < 1e-4);
  }
}

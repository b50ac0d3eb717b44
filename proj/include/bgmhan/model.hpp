#pragma once

// BGM-HAN encoder and classifier.
//
// Every level runs   LN -> multi-head self-attention -> W^O -> dropout -> GRN
// with GRN(X) = LN(gamma * FFN(X) + X) and FFN(X) = GELU(X W1 + b1) W2 + b2,
// then mean-pools each sequence. Tokens pool into sentence vectors, sentence
// vectors pool into one vector h_f per field. An optional field stage runs one
// more level (without pooling) across the field vectors of a profile before
// the head MLP.
//
// Real (non-PAD) positions are packed into rows and grouped with Segment
// ranges, so PAD positions never take part in attention or pooling.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bgmhan/bpe.hpp"
#include "bgmhan/error.hpp"
#include "bgmhan/profile.hpp"
#include "bgmhan/random.hpp"
#include "bgmhan/tensor.hpp"

namespace bgmhan {

struct ModelConfig {
  std::size_t d = 64;  // embedding width
  std::size_t s = 6;   // max sentences per field
  std::size_t w = 24;  // max tokens per sentence
  std::size_t hidden = 128;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::size_t vocab_size = 0;
  std::size_t fields = 4;  // 4 profile fields, 5 when the analysis is appended
  bool field_stage = true;
  bool gated = true;  // false drops the FFN branch (gate fixed at 0)
  bool masked_pool = true;
  double ln_eps = 1e-5;

  static ModelConfig paper_scale() {
    ModelConfig c;
    c.d = 768;
    c.s = 10;
    c.w = 50;
    c.hidden = 1024;
    c.heads = 8;
    c.dropout = 0.6;
    return c;
  }

  static ModelConfig desk_scale() { return ModelConfig{}; }

  std::size_t d_k() const { return hidden / heads; }

  void validate() const {
    if (d == 0 || s == 0 || w == 0 || hidden == 0 || heads == 0) throw UsageError("model config: dimensions must be positive");
    if (hidden % heads != 0) throw UsageError("model config: heads must divide hidden");
    if (!(dropout >= 0 && dropout < 1)) throw UsageError("model config: dropout must lie in [0, 1)");
    if (vocab_size < 2) throw UsageError("model config: vocab_size must cover the reserved ids");
    if (fields != 4 && fields != 5) throw UsageError("model config: fields must be 4 or 5");
    if (!(ln_eps > 0)) throw UsageError("model config: ln_eps must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"s", c.s},
          {"w", c.w},
          {"hidden", c.hidden},
          {"heads", c.heads},
          {"dropout", c.dropout},
          {"vocab_size", c.vocab_size},
          {"fields", c.fields},
          {"field_stage", c.field_stage},
          {"gated", c.gated},
          {"masked_pool", c.masked_pool},
          {"ln_eps", c.ln_eps}};
}

// Missing keys keep their current value; unknown keys are rejected.
inline void update_from_json(ModelConfig& c, const nlohmann::json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "d") c.d = v.get<std::size_t>();
    else if (k == "s") c.s = v.get<std::size_t>();
    else if (k == "w") c.w = v.get<std::size_t>();
    else if (k == "hidden") c.hidden = v.get<std::size_t>();
    else if (k == "heads") c.heads = v.get<std::size_t>();
    else if (k == "dropout") c.dropout = v.get<double>();
    else if (k == "vocab_size") c.vocab_size = v.get<std::size_t>();
    else if (k == "fields") c.fields = v.get<std::size_t>();
    else if (k == "field_stage") c.field_stage = v.get<bool>();
    else if (k == "gated") c.gated = v.get<bool>();
    else if (k == "masked_pool") c.masked_pool = v.get<bool>();
    else if (k == "ln_eps") c.ln_eps = v.get<double>();
    else throw UsageError("model config: unknown key '" + k + "'");
  }
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  update_from_json(c, j);
  return c;
}

// ---------------------------------------------------------------------------
// Tokenized input

// Pieces of split('.'), whitespace-trimmed, blank pieces dropped.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto dot = text.find('.', start);
    const auto end = dot == std::string_view::npos ? text.size() : dot;
    auto piece = detail::trim(text.substr(start, end - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return out;
}

// Sentences (first s) of token ids (first w each) for one field.
using FieldTokens = std::vector<std::vector<TokenId>>;

inline FieldTokens tokenize_field(std::string_view text, const Vocabulary& vocab, std::size_t s, std::size_t w) {
  FieldTokens out;
  for (auto& sentence : split_sentences(text)) {
    if (out.size() == s) break;
    auto ids = encode(sentence, vocab);
    if (ids.size() > w) ids.resize(w);
    out.push_back(std::move(ids));
  }
  return out;
}

struct TokenizedProfile {
  std::vector<FieldTokens> fields;
};

// Field texts in model order: GCEA, GCEO, Leadership, PIQ (+ Analysis).
inline std::vector<std::string> model_field_texts(const Profile& p, std::size_t fields) {
  std::vector<std::string> out;
  for (const auto f : kProfileFields) out.push_back(field_text(p, f));
  if (fields == 5) out.push_back(p.analysis ? *p.analysis : std::string(kMissingText));
  return out;
}

inline TokenizedProfile tokenize_profile(const Profile& p, const Vocabulary& vocab, const ModelConfig& cfg) {
  TokenizedProfile t;
  for (const auto& text : model_field_texts(p, cfg.fields)) t.fields.push_back(tokenize_field(text, vocab, cfg.s, cfg.w));
  return t;
}

// A batch flattened into packed token rows.
struct PackedBatch {
  std::size_t items = 0;
  std::size_t fields = 0;
  std::vector<std::int64_t> ids;           // one per real token
  std::vector<Segment> token_segments;     // one per sentence, over ids
  std::vector<Segment> sentence_segments;  // one per (item, field), over sentences
};

inline PackedBatch pack_batch(std::span<const TokenizedProfile* const> batch, std::size_t fields) {
  PackedBatch b;
  b.items = batch.size();
  b.fields = fields;
  for (const auto* tp : batch) {
    if (tp->fields.size() != fields) throw DimensionError("pack_batch: profile has the wrong number of fields");
    for (const auto& field : tp->fields) {
      b.sentence_segments.push_back({b.token_segments.size(), field.size()});
      for (const auto& sentence : field) {
        b.token_segments.push_back({b.ids.size(), sentence.size()});
        for (const auto id : sentence) b.ids.push_back(id);
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Parameters

template <class T>
struct LevelParams {
  Tensor<T> ln_g, ln_b;
  Tensor<T> wq, wk, wv;  // d x hidden, head i in columns [i*d_k, (i+1)*d_k)
  Tensor<T> wo;          // hidden x d
  Tensor<T> gamma;       // d
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> grn_g, grn_b;
};

template <class T>
struct HeadParams {
  Tensor<T> w1, b1;  // (fields*d) x hidden
  Tensor<T> w2, b2;  // hidden x 1
};

struct ParamInfo {
  std::string name;
  bool decay = true;  // included in the L2 penalty
};

namespace detail {

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<T>(uniform(rng, -bound, bound));
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> fan_in_tensor(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor<T>(Shape{fan_in, fan_out}, std::sqrt(1.0 / static_cast<double>(fan_in)), rng);
}

template <class T>
Tensor<T> const_tensor(std::size_t n, T v) {
  Tensor<T> t(Shape{n}, v);
  t.set_requires_grad(true);
  return t;
}

template <class T>
LevelParams<T> init_level(const ModelConfig& c, Rng& rng) {
  LevelParams<T> p;
  p.ln_g = const_tensor<T>(c.d, T(1));
  p.ln_b = const_tensor<T>(c.d, T(0));
  p.wq = fan_in_tensor<T>(c.d, c.hidden, rng);
  p.wk = fan_in_tensor<T>(c.d, c.hidden, rng);
  p.wv = fan_in_tensor<T>(c.d, c.hidden, rng);
  p.wo = fan_in_tensor<T>(c.hidden, c.d, rng);
  p.gamma = const_tensor<T>(c.d, c.gated ? T(1) : T(0));
  p.w1 = fan_in_tensor<T>(c.d, c.hidden, rng);
  p.b1 = const_tensor<T>(c.hidden, T(0));
  p.w2 = fan_in_tensor<T>(c.hidden, c.d, rng);
  p.b2 = const_tensor<T>(c.d, T(0));
  p.grn_g = const_tensor<T>(c.d, T(1));
  p.grn_b = const_tensor<T>(c.d, T(0));
  return p;
}

}  // namespace detail

template <class T>
class Model {
 public:
  Model() = default;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    embedding_ = detail::uniform_tensor<T>(Shape{cfg_.vocab_size, cfg_.d}, 1.0, rng);
    for (std::size_t j = 0; j < cfg_.d; ++j) embedding_[j] = T(0);  // PAD row
    token_ = detail::init_level<T>(cfg_, rng);
    sentence_ = detail::init_level<T>(cfg_, rng);
    if (cfg_.field_stage) field_ = detail::init_level<T>(cfg_, rng);
    head_.w1 = detail::fan_in_tensor<T>(cfg_.fields * cfg_.d, cfg_.hidden, rng);
    head_.b1 = detail::const_tensor<T>(cfg_.hidden, T(0));
    head_.w2 = detail::fan_in_tensor<T>(cfg_.hidden, 1, rng);
    head_.b2 = detail::const_tensor<T>(1, T(0));
  }

  const ModelConfig& config() const { return cfg_; }
  Tensor<T>& embedding() { return embedding_; }
  const Tensor<T>& embedding() const { return embedding_; }
  LevelParams<T>& token_level() { return token_; }
  LevelParams<T>& sentence_level() { return sentence_; }
  LevelParams<T>& field_level() { return field_; }
  HeadParams<T>& head() { return head_; }
  const LevelParams<T>& token_level() const { return token_; }
  const LevelParams<T>& sentence_level() const { return sentence_; }
  const LevelParams<T>& field_level() const { return field_; }
  const HeadParams<T>& head() const { return head_; }

  // Every parameter in a fixed order. Without the gate, gamma and the FFN are
  // left out so they stay frozen.
  std::vector<std::pair<ParamInfo, Tensor<T>>> parameters() const {
    std::vector<std::pair<ParamInfo, Tensor<T>>> out;
    out.push_back({{"embedding", true}, embedding_});
    auto level = [&](const char* prefix, const LevelParams<T>& p) {
      const std::string pre = prefix;
      out.push_back({{pre + ".ln_g", false}, p.ln_g});
      out.push_back({{pre + ".ln_b", false}, p.ln_b});
      out.push_back({{pre + ".wq", true}, p.wq});
      out.push_back({{pre + ".wk", true}, p.wk});
      out.push_back({{pre + ".wv", true}, p.wv});
      out.push_back({{pre + ".wo", true}, p.wo});
      if (cfg_.gated) {
        out.push_back({{pre + ".gamma", false}, p.gamma});
        out.push_back({{pre + ".w1", true}, p.w1});
        out.push_back({{pre + ".b1", true}, p.b1});
        out.push_back({{pre + ".w2", true}, p.w2});
        out.push_back({{pre + ".b2", true}, p.b2});
      }
      out.push_back({{pre + ".grn_g", false}, p.grn_g});
      out.push_back({{pre + ".grn_b", false}, p.grn_b});
    };
    level("token", token_);
    level("sentence", sentence_);
    if (cfg_.field_stage) level("field", field_);
    out.push_back({{"head.w1", true}, head_.w1});
    out.push_back({{"head.b1", true}, head_.b1});
    out.push_back({{"head.w2", true}, head_.w2});
    out.push_back({{"head.b2", true}, head_.b2});
    return out;
  }

  std::vector<Tensor<T>> parameter_tensors() const {
    std::vector<Tensor<T>> out;
    for (auto& [info, t] : parameters()) out.push_back(t);
    return out;
  }

  // One level without pooling over packed rows x.
  Tensor<T> level_sequence(const Tensor<T>& x, std::span<const Segment> segs, const LevelParams<T>& p,
                           Rng* dropout_rng) const {
    const auto xn = layer_norm(x, p.ln_g, p.ln_b, cfg_.ln_eps);
    const auto ctx = segment_attention(matmul(xn, p.wq), matmul(xn, p.wk), matmul(xn, p.wv), segs, cfg_.heads);
    auto a = matmul(ctx, p.wo);
    if (dropout_rng && cfg_.dropout > 0) a = dropout(a, cfg_.dropout, *dropout_rng);
    return gated_residual(a, p);
  }

  // LN(gamma * FFN(x) + x); without the gate this is LN(x).
  Tensor<T> gated_residual(const Tensor<T>& x, const LevelParams<T>& p) const {
    if (!cfg_.gated) return layer_norm(x, p.grn_g, p.grn_b, cfg_.ln_eps);
    const auto f = add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
    return layer_norm(add(mul_bias(f, p.gamma), x), p.grn_g, p.grn_b, cfg_.ln_eps);
  }

  // Level + mean pool: one output row per segment. `extent` is the padded
  // sequence length used by the unmasked pool.
  Tensor<T> level_pooled(const Tensor<T>& x, std::span<const Segment> segs, const LevelParams<T>& p,
                         std::size_t extent, Rng* dropout_rng) const {
    const auto y = level_sequence(x, segs, p, dropout_rng);
    return segment_mean(y, segs, cfg_.masked_pool ? 0 : extent);
  }

  // Field vectors h_f, [items*fields x d], before the field stage.
  Tensor<T> field_vectors(const PackedBatch& b, Rng* dropout_rng) const {
    const std::size_t rows = b.items * b.fields;
    if (b.ids.empty()) return Tensor<T>(Shape{rows, cfg_.d});
    for (const auto id : b.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) throw UsageError("model: token id out of range");
    }
    const auto x = gather_rows(embedding_, std::span<const std::int64_t>(b.ids));
    const auto sentences = level_pooled(x, b.token_segments, token_, cfg_.w, dropout_rng);
    return level_pooled(sentences, b.sentence_segments, sentence_, cfg_.s, dropout_rng);
  }

  // Head input [items x fields*d].
  Tensor<T> profile_vectors(const Tensor<T>& h, std::size_t items, Rng* dropout_rng) const {
    Tensor<T> g = h;
    if (cfg_.field_stage) {
      std::vector<Segment> segs(items);
      for (std::size_t i = 0; i < items; ++i) segs[i] = {i * cfg_.fields, cfg_.fields};
      g = level_sequence(h, segs, field_, dropout_rng);
    }
    return reshape(g, Shape{items, cfg_.fields * cfg_.d});
  }

  // MLP head: sigmoid(GELU(h W1 + b1) W2 + b2), [items x 1].
  Tensor<T> classify(const Tensor<T>& h, Rng* dropout_rng) const {
    if (h.rank() != 2 || h.dim(1) != cfg_.fields * cfg_.d) {
      throw DimensionError("classify: expected [n x " + std::to_string(cfg_.fields * cfg_.d) + "], got " +
                           shape_str(h.shape()));
    }
    auto z = gelu(add_bias(matmul(h, head_.w1), head_.b1));
    if (dropout_rng && cfg_.dropout > 0) z = dropout(z, cfg_.dropout, *dropout_rng);
    return sigmoid(add_bias(matmul(z, head_.w2), head_.b2));
  }

  // Probabilities [items x 1]. Pass an Rng for training mode (dropout on).
  Tensor<T> forward(const PackedBatch& b, Rng* dropout_rng = nullptr) const {
    const auto h = field_vectors(b, dropout_rng);
    return classify(profile_vectors(h, b.items, dropout_rng), dropout_rng);
  }

  Tensor<T> forward(std::span<const TokenizedProfile* const> batch, Rng* dropout_rng = nullptr) const {
    return forward(pack_batch(batch, cfg_.fields), dropout_rng);
  }

  // Eval-mode probability for one profile.
  double predict(const TokenizedProfile& tp) const {
    NoGradScope<T> no_grad;
    const TokenizedProfile* one[] = {&tp};
    return static_cast<double>(forward(std::span<const TokenizedProfile* const>(one)).item());
  }

 private:
  ModelConfig cfg_;
  Tensor<T> embedding_;
  LevelParams<T> token_, sentence_, field_;
  HeadParams<T> head_;
};

// ---------------------------------------------------------------------------
// Dense views

template <class T>
struct FieldEmbedding {
  Tensor<T> values;                // s x w x d, PAD positions are zero
  std::vector<std::uint8_t> mask;  // s x w, 1 for real tokens

  std::size_t real_tokens() const {
    std::size_t n = 0;
    for (const auto m : mask) n += m;
    return n;
  }
};

template <class T>
FieldEmbedding<T> embed_field(std::string_view text, const Vocabulary& vocab, const ModelConfig& cfg,
                              const Tensor<T>& embedding) {
  const auto tokens = tokenize_field(text, vocab, cfg.s, cfg.w);
  std::vector<std::int64_t> ids(cfg.s * cfg.w, -1);
  std::vector<std::uint8_t> mask(cfg.s * cfg.w, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t j = 0; j < tokens[i].size(); ++j) {
      ids[i * cfg.w + j] = tokens[i][j];
      mask[i * cfg.w + j] = 1;
    }
  auto rows = gather_rows(embedding, std::span<const std::int64_t>(ids));
  return {reshape(rows, Shape{cfg.s, cfg.w, cfg.d}), std::move(mask)};
}

// Per-head attention weights softmax(Q_i K_i^T / sqrt(d_k)) for X [l x d],
// one [l x l] matrix per head. No PAD handling.
template <class T>
std::vector<Tensor<T>> attention_weights(const Tensor<T>& x, const LevelParams<T>& p, std::size_t heads) {
  const std::size_t l = x.dim(0), width = p.wq.dim(1), dk = width / heads;
  const auto q = matmul(x, p.wq), k = matmul(x, p.wk);
  std::vector<Tensor<T>> out;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> qh(Shape{l, dk}), kt(Shape{dk, l});
    for (std::size_t r = 0; r < l; ++r)
      for (std::size_t c = 0; c < dk; ++c) {
        qh[r * dk + c] = q.at(r, h * dk + c);
        kt[c * l + r] = k.at(r, h * dk + c);
      }
    out.push_back(softmax(scale(matmul(qh, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)))), 1));
  }
  return out;
}

// [head_1; ...; head_h] W^O over all l rows of x.
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const LevelParams<T>& p, std::size_t heads) {
  if (x.rank() != 2 || x.dim(1) != p.wq.dim(0)) {
    throw DimensionError("multi_head_attention: input " + shape_str(x.shape()) + " does not match W^Q " +
                         shape_str(p.wq.shape()));
  }
  if (p.wq.dim(1) % heads != 0) throw DimensionError("multi_head_attention: heads must divide the width");
  const Segment all{0, x.dim(0)};
  const auto ctx = segment_attention(matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv), std::span(&all, 1), heads);
  return matmul(ctx, p.wo);
}

// Dense encode_level: x [n x l x dim] with mask [n x l] -> [n x dim].
template <class T>
Tensor<T> encode_level(const Model<T>& model, const Tensor<T>& x, std::span<const std::uint8_t> mask,
                       const LevelParams<T>& p, Rng* dropout_rng = nullptr) {
  if (x.rank() != 3 || mask.size() != x.dim(0) * x.dim(1)) throw DimensionError("encode_level: mask does not match input");
  const std::size_t n = x.dim(0), l = x.dim(1), dim = x.dim(2);
  std::vector<std::int64_t> rows;
  std::vector<Segment> segs(n);
  for (std::size_t i = 0; i < n; ++i) {
    segs[i].offset = rows.size();
    for (std::size_t j = 0; j < l; ++j)
      if (mask[i * l + j]) rows.push_back(static_cast<std::int64_t>(i * l + j));
    segs[i].length = rows.size() - segs[i].offset;
  }
  if (rows.empty()) return Tensor<T>(Shape{n, dim});
  const auto packed = select_rows(reshape(x, Shape{n * l, dim}), std::span<const std::int64_t>(rows));
  return model.level_pooled(packed, segs, p, l, dropout_rng);
}

struct ProfileEncoding {
  std::vector<std::vector<double>> h_f;  // one length-d vector per field
  std::vector<double> h;                 // concatenation, fields*d
};

template <class T>
ProfileEncoding encode_profile(const Profile& p, const Vocabulary& vocab, const Model<T>& model) {
  NoGradScope<T> no_grad;
  const auto tp = tokenize_profile(p, vocab, model.config());
  const TokenizedProfile* one[] = {&tp};
  const auto hf = model.field_vectors(pack_batch(std::span<const TokenizedProfile* const>(one), model.config().fields), nullptr);
  ProfileEncoding e;
  const std::size_t d = model.config().d;
  for (std::size_t f = 0; f < model.config().fields; ++f) {
    e.h_f.emplace_back(hf.values().begin() + f * d, hf.values().begin() + (f + 1) * d);
    e.h.insert(e.h.end(), e.h_f.back().begin(), e.h_f.back().end());
  }
  return e;
}

}  // namespace bgmhan

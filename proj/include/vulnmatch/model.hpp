#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vulnmatch/autodiff.hpp"
#include "vulnmatch/errors.hpp"
#include "vulnmatch/rng.hpp"
#include "vulnmatch/tokenizer.hpp"

namespace vulnmatch {

enum class PoolingMode { Rnn, Mean, Max };

inline const char* pooling_name(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::Rnn: return "rnn";
    case PoolingMode::Mean: return "mean";
    case PoolingMode::Max: return "max";
  }
  return "rnn";
}

struct ModelConfig {
  int d = 64;       // statement embedding width
  int h = 16;       // factorized scope width
  int n = 155;      // max statements per function
  int r = 20;       // max tokens per statement
  int q = 12;       // max vulnerable statements per scope
  int layers = 2;   // encoder depth
  int heads = 4;
  double dropout = 0.1;
  int vocab_size = 0;  // set from the trained vocabulary
  PoolingMode pooling = PoolingMode::Rnn;
  bool positional = false;
  int ffn_mult = 4;

  void validate() const {
    if (d < 1 || h < 1 || n < 1 || r < 1 || q < 1) {
      raise(ErrorKind::Config, "model: all shape constants must be >= 1");
    }
    if (heads < 1 || d % heads != 0) {
      raise(ErrorKind::Config, "model: d must be divisible by heads");
    }
    if (h > d) raise(ErrorKind::Config, "model: h must not exceed d");
    if (layers < 0) raise(ErrorKind::Config, "model: layers must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) {
      raise(ErrorKind::Config, "model: dropout must lie in [0, 1)");
    }
    if (vocab_size < 2) raise(ErrorKind::Config, "model: vocab_size not set");
  }
};

template <typename S>
struct GruParams {
  using Mat = ad::MatT<S>;
  Mat wz, uz, bz;
  Mat wr, ur, br;
  Mat wh, uh, bh;
};

template <typename S>
struct EncoderLayerParams {
  using Mat = ad::MatT<S>;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat w1, b1, w2, b2;
  Mat ln1_g, ln1_b, ln2_g, ln2_b;
};

// Every learnable weight of the network. The codebook lives separately; it
// only exists in the main phase.
template <typename S>
struct ModelParams {
  using Mat = ad::MatT<S>;

  Mat embed;  // vocab_size x d token embeddings
  GruParams<S> gru_statement;
  GruParams<S> gru_vul;
  GruParams<S> gru_function;
  Mat p_benign;             // q x d stand-in scope for benign functions
  Mat w_factor;             // d x h scope factorization
  Mat w_up;                 // h x d centroid up-projection
  std::vector<EncoderLayerParams<S>> layers;
  Mat w_g, w_u;             // function head
  Mat w_i, w_j;             // statement head
  Mat sel_q, sel_k, sel_v;  // h x h centroid-selection attention
};

namespace detail {

template <typename S, typename Fn>
void visit_gru(const std::string& prefix, GruParams<S>& g, Fn&& fn) {
  fn(prefix + ".wz", g.wz);
  fn(prefix + ".uz", g.uz);
  fn(prefix + ".bz", g.bz);
  fn(prefix + ".wr", g.wr);
  fn(prefix + ".ur", g.ur);
  fn(prefix + ".br", g.br);
  fn(prefix + ".wh", g.wh);
  fn(prefix + ".uh", g.uh);
  fn(prefix + ".bh", g.bh);
}

}  // namespace detail

// Enumerates parameters in a fixed order; the optimizer, checkpointing, and
// gradient aggregation all rely on this ordering.
template <typename S, typename Fn>
void for_each_param(ModelParams<S>& p, Fn&& fn) {
  fn(std::string("embed.E"), p.embed);
  detail::visit_gru<S>("gru_statement", p.gru_statement, fn);
  detail::visit_gru<S>("gru_vul", p.gru_vul, fn);
  detail::visit_gru<S>("gru_function", p.gru_function, fn);
  fn(std::string("p_benign"), p.p_benign);
  fn(std::string("w_factor"), p.w_factor);
  fn(std::string("w_up"), p.w_up);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    std::string pre = "enc." + std::to_string(l) + ".";
    EncoderLayerParams<S>& e = p.layers[l];
    fn(pre + "wq", e.wq);
    fn(pre + "bq", e.bq);
    fn(pre + "wk", e.wk);
    fn(pre + "bk", e.bk);
    fn(pre + "wv", e.wv);
    fn(pre + "bv", e.bv);
    fn(pre + "wo", e.wo);
    fn(pre + "bo", e.bo);
    fn(pre + "w1", e.w1);
    fn(pre + "b1", e.b1);
    fn(pre + "w2", e.w2);
    fn(pre + "b2", e.b2);
    fn(pre + "ln1_g", e.ln1_g);
    fn(pre + "ln1_b", e.ln1_b);
    fn(pre + "ln2_g", e.ln2_g);
    fn(pre + "ln2_b", e.ln2_b);
  }
  fn(std::string("head_fn.w_g"), p.w_g);
  fn(std::string("head_fn.w_u"), p.w_u);
  fn(std::string("head_stmt.w_i"), p.w_i);
  fn(std::string("head_stmt.w_j"), p.w_j);
  fn(std::string("select.w_q"), p.sel_q);
  fn(std::string("select.w_k"), p.sel_k);
  fn(std::string("select.w_v"), p.sel_v);
}

template <typename S, typename Fn>
void for_each_param(const ModelParams<S>& p, Fn&& fn) {
  for_each_param(const_cast<ModelParams<S>&>(p),
                 [&](const std::string& name, ad::MatT<S>& m) {
                   fn(name, static_cast<const ad::MatT<S>&>(m));
                 });
}

namespace detail {

template <typename S>
void fill_gaussian(ad::MatT<S>& m, Eigen::Index rows, Eigen::Index cols, RngStream& rng,
                   double stddev) {
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = static_cast<S>(rng.next_gaussian() * stddev);
    }
  }
}

template <typename S>
void init_gru(GruParams<S>& g, int din, int dh, RngStream& rng, double stddev) {
  fill_gaussian(g.wz, din, dh, rng, stddev);
  fill_gaussian(g.uz, dh, dh, rng, stddev);
  g.bz = ad::MatT<S>::Zero(1, dh);
  fill_gaussian(g.wr, din, dh, rng, stddev);
  fill_gaussian(g.ur, dh, dh, rng, stddev);
  g.br = ad::MatT<S>::Zero(1, dh);
  fill_gaussian(g.wh, din, dh, rng, stddev);
  fill_gaussian(g.uh, dh, dh, rng, stddev);
  g.bh = ad::MatT<S>::Zero(1, dh);
}

}  // namespace detail

// Weights ~ N(0, 0.02), gains 1, biases 0.
template <typename S>
ModelParams<S> init_model_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  constexpr double kStd = 0.02;
  RngStream rng = RngStream(seed).fork("init");
  ModelParams<S> p;
  detail::fill_gaussian(p.embed, cfg.vocab_size, cfg.d, rng, kStd);
  detail::init_gru(p.gru_statement, cfg.d, cfg.d, rng, kStd);
  detail::init_gru(p.gru_vul, cfg.d, cfg.d, rng, kStd);
  detail::init_gru(p.gru_function, cfg.d, cfg.d, rng, kStd);
  detail::fill_gaussian(p.p_benign, cfg.q, cfg.d, rng, kStd);
  detail::fill_gaussian(p.w_factor, cfg.d, cfg.h, rng, kStd);
  detail::fill_gaussian(p.w_up, cfg.h, cfg.d, rng, kStd);
  p.layers.resize(static_cast<size_t>(cfg.layers));
  int ffn = cfg.d * cfg.ffn_mult;
  for (auto& e : p.layers) {
    detail::fill_gaussian(e.wq, cfg.d, cfg.d, rng, kStd);
    e.bq = ad::MatT<S>::Zero(1, cfg.d);
    detail::fill_gaussian(e.wk, cfg.d, cfg.d, rng, kStd);
    e.bk = ad::MatT<S>::Zero(1, cfg.d);
    detail::fill_gaussian(e.wv, cfg.d, cfg.d, rng, kStd);
    e.bv = ad::MatT<S>::Zero(1, cfg.d);
    detail::fill_gaussian(e.wo, cfg.d, cfg.d, rng, kStd);
    e.bo = ad::MatT<S>::Zero(1, cfg.d);
    detail::fill_gaussian(e.w1, cfg.d, ffn, rng, kStd);
    e.b1 = ad::MatT<S>::Zero(1, ffn);
    detail::fill_gaussian(e.w2, ffn, cfg.d, rng, kStd);
    e.b2 = ad::MatT<S>::Zero(1, cfg.d);
    e.ln1_g = ad::MatT<S>::Ones(1, cfg.d);
    e.ln1_b = ad::MatT<S>::Zero(1, cfg.d);
    e.ln2_g = ad::MatT<S>::Ones(1, cfg.d);
    e.ln2_b = ad::MatT<S>::Zero(1, cfg.d);
  }
  detail::fill_gaussian(p.w_g, cfg.d, cfg.d, rng, kStd);
  detail::fill_gaussian(p.w_u, cfg.d, 1, rng, kStd);
  detail::fill_gaussian(p.w_i, cfg.d, cfg.d, rng, kStd);
  detail::fill_gaussian(p.w_j, cfg.d, 1, rng, kStd);
  detail::fill_gaussian(p.sel_q, cfg.h, cfg.h, rng, kStd);
  detail::fill_gaussian(p.sel_k, cfg.h, cfg.h, rng, kStd);
  detail::fill_gaussian(p.sel_v, cfg.h, cfg.h, rng, kStd);
  return p;
}

// --------------------------------------------------------------------------
// Tape bindings: one Var per parameter, created once per forward pass.
// --------------------------------------------------------------------------

template <typename S>
struct BoundGru {
  ad::Var<S> wz, uz, bz, wr, ur, br, wh, uh, bh;
  ad::GruStepParams<S> step() const { return {wz, uz, bz, wr, ur, br, wh, uh, bh}; }
};

template <typename S>
struct BoundEncoderLayer {
  ad::Var<S> wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Var<S> w1, b1, w2, b2;
  ad::Var<S> ln1_g, ln1_b, ln2_g, ln2_b;
};

template <typename S>
struct BoundParams {
  ad::Var<S> embed;
  BoundGru<S> gru_statement, gru_vul, gru_function;
  ad::Var<S> p_benign, w_factor, w_up;
  std::vector<BoundEncoderLayer<S>> layers;
  ad::Var<S> w_g, w_u, w_i, w_j;
  ad::Var<S> sel_q, sel_k, sel_v;
};

template <typename S>
BoundGru<S> bind_gru(ad::Tape<S>& t, const GruParams<S>& g) {
  return {t.param(g.wz), t.param(g.uz), t.param(g.bz), t.param(g.wr), t.param(g.ur),
          t.param(g.br), t.param(g.wh), t.param(g.uh), t.param(g.bh)};
}

template <typename S>
BoundParams<S> bind(ad::Tape<S>& t, const ModelParams<S>& p) {
  BoundParams<S> b;
  b.embed = t.param(p.embed);
  b.gru_statement = bind_gru(t, p.gru_statement);
  b.gru_vul = bind_gru(t, p.gru_vul);
  b.gru_function = bind_gru(t, p.gru_function);
  b.p_benign = t.param(p.p_benign);
  b.w_factor = t.param(p.w_factor);
  b.w_up = t.param(p.w_up);
  b.layers.reserve(p.layers.size());
  for (const auto& e : p.layers) {
    b.layers.push_back({t.param(e.wq), t.param(e.bq), t.param(e.wk), t.param(e.bk),
                        t.param(e.wv), t.param(e.bv), t.param(e.wo), t.param(e.bo),
                        t.param(e.w1), t.param(e.b1), t.param(e.w2), t.param(e.b2),
                        t.param(e.ln1_g), t.param(e.ln1_b), t.param(e.ln2_g),
                        t.param(e.ln2_b)});
  }
  b.w_g = t.param(p.w_g);
  b.w_u = t.param(p.w_u);
  b.w_i = t.param(p.w_i);
  b.w_j = t.param(p.w_j);
  b.sel_q = t.param(p.sel_q);
  b.sel_k = t.param(p.sel_k);
  b.sel_v = t.param(p.sel_v);
  return b;
}

// Shared context for one forward pass. `rng` is only consumed when training
// (dropout); evaluation-mode passes are deterministic.
template <typename S>
struct ForwardCtx {
  ad::Tape<S>& tape;
  const BoundParams<S>& params;
  const ModelConfig& cfg;
  bool training = false;
  RngStream* rng = nullptr;
};

namespace detail {

// Summarizes token embeddings of every row in one batched sweep: the GRU
// consumes all r token slots; mean/max pool over real tokens only.
template <typename S>
ad::Var<S> summarize_tokens(ForwardCtx<S>& ctx, const IdMatrix& ids,
                            const std::vector<int>& token_counts, const BoundGru<S>& gru) {
  using Mat = ad::MatT<S>;
  ad::Tape<S>& t = ctx.tape;
  Eigen::Index rows = ids.rows();
  Eigen::Index r = ids.cols();

  auto active_col = [&](Eigen::Index step) {
    Mat m(rows, 1);
    for (Eigen::Index j = 0; j < rows; ++j) {
      m(j, 0) = step < token_counts[static_cast<size_t>(j)] ? S(1) : S(0);
    }
    return m;
  };
  auto ids_col = [&](Eigen::Index step) {
    std::vector<int> column(static_cast<size_t>(rows));
    for (Eigen::Index j = 0; j < rows; ++j) column[static_cast<size_t>(j)] = ids(j, step);
    return column;
  };

  switch (ctx.cfg.pooling) {
    case PoolingMode::Rnn: {
      ad::Var<S> h = t.constant(Mat::Zero(rows, ctx.cfg.d));
      auto step_params = gru.step();
      for (Eigen::Index step = 0; step < r; ++step) {
        ad::Var<S> x = ad::embedding_lookup(ctx.params.embed, ids_col(step));
        h = ad::gru_step(x, h, step_params);
      }
      return h;
    }
    case PoolingMode::Mean: {
      ad::Var<S> acc = t.constant(Mat::Zero(rows, ctx.cfg.d));
      for (Eigen::Index step = 0; step < r; ++step) {
        ad::Var<S> x = ad::embedding_lookup(ctx.params.embed, ids_col(step));
        acc = ad::add(acc, ad::mul(x, t.constant(active_col(step))));
      }
      Mat inv(rows, 1);
      for (Eigen::Index j = 0; j < rows; ++j) {
        int c = token_counts[static_cast<size_t>(j)];
        inv(j, 0) = c > 0 ? S(1) / static_cast<S>(c) : S(0);
      }
      return ad::mul(acc, t.constant(inv));
    }
    case PoolingMode::Max: {
      const S kNegBig = S(-1e4);
      ad::Var<S> best;
      for (Eigen::Index step = 0; step < r; ++step) {
        Mat active = active_col(step);
        Mat offset = (Mat::Ones(rows, 1) - active) * kNegBig;
        ad::Var<S> x = ad::embedding_lookup(ctx.params.embed, ids_col(step));
        ad::Var<S> masked = ad::add(ad::mul(x, t.constant(active)), t.constant(offset));
        best = step == 0 ? masked : ad::emax(best, masked);
      }
      return best;
    }
  }
  raise(ErrorKind::Config, "unknown pooling mode");
}

template <typename S>
ad::MatT<S> row_mask_mat(const std::vector<uint8_t>& mask) {
  ad::MatT<S> m(static_cast<Eigen::Index>(mask.size()), 1);
  for (size_t j = 0; j < mask.size(); ++j) m(static_cast<Eigen::Index>(j), 0) = S(mask[j]);
  return m;
}

}  // namespace detail

// Statement embeddings S (n x d); masked statement rows are exactly zero.
template <typename S>
ad::Var<S> embed_statements(ForwardCtx<S>& ctx, const StatementMatrix& sm) {
  ad::Var<S> summary =
      detail::summarize_tokens(ctx, sm.ids, sm.token_counts, ctx.params.gru_statement);
  return ad::mul(summary, ctx.tape.constant(detail::row_mask_mat<S>(sm.statement_mask)));
}

// Scope embeddings P (q x d); benign functions get the learnable stand-in.
template <typename S>
ad::Var<S> embed_scope(ForwardCtx<S>& ctx, const ScopeMatrix& pm) {
  if (pm.is_benign) return ctx.params.p_benign;
  std::vector<int> counts(static_cast<size_t>(pm.ids.rows()), 0);
  for (Eigen::Index j = 0; j < pm.ids.rows(); ++j) {
    int c = 0;
    while (c < pm.ids.cols() && pm.ids(j, c) != Vocab::kPadId) ++c;
    counts[static_cast<size_t>(j)] = pm.scope_mask[static_cast<size_t>(j)] ? std::max(c, 1) : 0;
  }
  ad::Var<S> summary = detail::summarize_tokens(ctx, pm.ids, counts, ctx.params.gru_statement);
  return ad::mul(summary, ctx.tape.constant(detail::row_mask_mat<S>(pm.scope_mask)));
}

// Runs the scope-summarization GRU over all q rows; returns the final state.
template <typename S>
ad::Var<S> summarize_scope(ForwardCtx<S>& ctx, ad::Var<S> scope_rows) {
  ad::Tape<S>& t = ctx.tape;
  Eigen::Index q = t.val(scope_rows).rows();
  ad::Var<S> h = t.constant(ad::MatT<S>::Zero(1, ctx.cfg.d));
  auto step_params = ctx.params.gru_vul.step();
  for (Eigen::Index j = 0; j < q; ++j) {
    h = ad::gru_step(ad::slice_rows(scope_rows, j, 1), h, step_params);
  }
  return h;
}

// Projects the d-dimensional scope summary to h dimensions and normalizes.
template <typename S>
ad::Var<S> factorize_scope(ForwardCtx<S>& ctx, ad::Var<S> v_raw) {
  return ad::layer_norm(ad::matmul(v_raw, ctx.params.w_factor));
}

inline ad::MatT<double> sinusoidal_positions(int rows, int d);

// Encoder stack over [S; aux]: per layer A = LN(MultiAttn(H)) + H, then
// H = LN(FFN(A) + A). PAD statement rows are masked out of attention keys;
// the aux row is dropped from the returned n x d output.
template <typename S>
ad::Var<S> encoder_forward(ForwardCtx<S>& ctx, ad::Var<S> statements, ad::Var<S> aux,
                           const std::vector<uint8_t>& statement_mask) {
  ad::Tape<S>& t = ctx.tape;
  const ModelConfig& cfg = ctx.cfg;
  Eigen::Index n = t.val(statements).rows();
  ad::Var<S> H = ad::concat_rows(statements, aux);

  if (cfg.positional) {
    ad::MatT<double> pe = sinusoidal_positions(static_cast<int>(n), cfg.d);
    ad::MatT<S> pe_full = ad::MatT<S>::Zero(n + 1, cfg.d);
    pe_full.topRows(n) = pe.template cast<S>();
    H = ad::add(H, t.constant(pe_full));
  }

  std::vector<uint8_t> key_mask(statement_mask.begin(), statement_mask.end());
  key_mask.push_back(1);  // aux row always attendable

  int dh = cfg.d / cfg.heads;
  S inv_sqrt_dh = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
  for (const BoundEncoderLayer<S>& layer : ctx.params.layers) {
    ad::Var<S> Q = ad::add(ad::matmul(H, layer.wq), layer.bq);
    ad::Var<S> K = ad::add(ad::matmul(H, layer.wk), layer.bk);
    ad::Var<S> Vv = ad::add(ad::matmul(H, layer.wv), layer.bv);
    ad::Var<S> ctx_all;
    for (int head = 0; head < cfg.heads; ++head) {
      Eigen::Index c0 = static_cast<Eigen::Index>(head) * dh;
      ad::Var<S> Qh = ad::slice(Q, 0, c0, n + 1, dh);
      ad::Var<S> Kh = ad::slice(K, 0, c0, n + 1, dh);
      ad::Var<S> Vh = ad::slice(Vv, 0, c0, n + 1, dh);
      ad::Var<S> probs = ad::row_softmax(ad::scale(ad::matmul_nt(Qh, Kh), inv_sqrt_dh), key_mask);
      ad::Var<S> ctx_h = ad::matmul(probs, Vh);
      ctx_all = head == 0 ? ctx_h : ad::concat_cols(ctx_all, ctx_h);
    }
    ad::Var<S> attn = ad::add(ad::matmul(ctx_all, layer.wo), layer.bo);
    ad::Var<S> A = ad::add(ad::layer_norm(attn, layer.ln1_g, layer.ln1_b), H);
    ad::Var<S> hidden = ad::relu(ad::add(ad::matmul(A, layer.w1), layer.b1));
    ad::Var<S> ffn = ad::add(ad::matmul(hidden, layer.w2), layer.b2);
    H = ad::layer_norm(ad::add(ffn, A), layer.ln2_g, layer.ln2_b);
  }
  return ad::slice_rows(H, 0, n);
}

// Function-level probability: summarize real statement rows with the
// function GRU (PAD steps skipped), then sigma(drop(tanh(drop(.) Wg)) Wu).
template <typename S>
ad::Var<S> predict_function(ForwardCtx<S>& ctx, ad::Var<S> encoded,
                            const std::vector<uint8_t>& statement_mask) {
  ad::Tape<S>& t = ctx.tape;
  ad::Var<S> h = t.constant(ad::MatT<S>::Zero(1, ctx.cfg.d));
  auto step_params = ctx.params.gru_function.step();
  for (size_t j = 0; j < statement_mask.size(); ++j) {
    if (!statement_mask[j]) continue;
    h = ad::gru_step(ad::slice_rows(encoded, static_cast<Eigen::Index>(j), 1), h, step_params);
  }
  ad::Var<S> inner = ad::dropout(h, ctx.cfg.dropout, ctx.rng, ctx.training);
  ad::Var<S> hidden = ad::tanh(ad::matmul(inner, ctx.params.w_g));
  ad::Var<S> outer = ad::dropout(hidden, ctx.cfg.dropout, ctx.rng, ctx.training);
  return ad::sigmoid(ad::matmul(outer, ctx.params.w_u));
}

// Per-statement probabilities (n x 1). PAD rows are still mapped; callers
// exclude them from losses and metrics via the mask.
template <typename S>
ad::Var<S> predict_statements(ForwardCtx<S>& ctx, ad::Var<S> encoded) {
  ad::Var<S> inner = ad::dropout(encoded, ctx.cfg.dropout, ctx.rng, ctx.training);
  ad::Var<S> hidden = ad::tanh(ad::matmul(inner, ctx.params.w_i));
  ad::Var<S> outer = ad::dropout(hidden, ctx.cfg.dropout, ctx.rng, ctx.training);
  return ad::sigmoid(ad::matmul(outer, ctx.params.w_j));
}

inline ad::MatT<double> sinusoidal_positions(int rows, int d) {
  ad::MatT<double> pe(rows, d);
  for (int pos = 0; pos < rows; ++pos) {
    for (int i = 0; i < d; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace vulnmatch

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "vulnmatch/autodiff.hpp"
#include "vulnmatch/model.hpp"
#include "vulnmatch/rng.hpp"

namespace vulnmatch {

// k learnable centroids in the factorized h-dimensional scope space.
template <typename S>
struct Codebook {
  ad::MatT<S> centroids;  // k x h

  int k() const { return static_cast<int>(centroids.rows()); }
  int h() const { return static_cast<int>(centroids.cols()); }
};

struct SinkhornConfig {
  double epsilon = 0.05;  // entropic regularization
  int max_iters = 200;
  double tol = 1e-6;  // L1 marginal violation threshold

  void validate() const {
    if (epsilon <= 0.0) raise(ErrorKind::Config, "sinkhorn: epsilon must be > 0");
    if (max_iters < 1) raise(ErrorKind::Config, "sinkhorn: max_iters must be >= 1");
    if (tol <= 0.0) raise(ErrorKind::Config, "sinkhorn: tol must be > 0");
  }
};

// Entries ~ N(0, 1/sqrt(h)).
template <typename S>
Codebook<S> init_codebook(int k, int h, uint64_t seed) {
  if (k < 1 || h < 1) raise(ErrorKind::Config, "codebook: k and h must be >= 1");
  RngStream rng = RngStream(seed).fork("codebook");
  Codebook<S> cb;
  double stddev = 1.0 / std::sqrt(static_cast<double>(h));
  cb.centroids.resize(k, h);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < h; ++j) {
      cb.centroids(i, j) = static_cast<S>(rng.next_gaussian() * stddev);
    }
  }
  return cb;
}

template <typename S>
struct SinkhornResult {
  S cost = S(0);        // <plan, cost matrix>
  ad::MatT<S> plan;     // m x k, approximately uniform marginals
  int iterations = 0;
  S marginal_error = S(0);
  bool converged = false;
};

// Squared-Euclidean pairwise costs.
template <typename S>
ad::MatT<S> pairwise_sq_dists(const ad::MatT<S>& a, const ad::MatT<S>& b) {
  ad::MatT<S> m = -2 * (a * b.transpose());
  m.colwise() += a.rowwise().squaredNorm();
  m.rowwise() += b.rowwise().squaredNorm().transpose();
  return m.cwiseMax(S(0));
}

// Log-domain Sinkhorn between uniform point masses on the rows of `points`
// and of `centroids`. Iterates until the row-marginal violation drops below
// tol or max_iters is reached; column marginals are exact by construction.
template <typename S>
SinkhornResult<S> sinkhorn(const ad::MatT<S>& points, const ad::MatT<S>& centroids,
                           const SinkhornConfig& cfg) {
  cfg.validate();
  Eigen::Index m = points.rows();
  Eigen::Index k = centroids.rows();
  if (m < 1 || k < 1) raise(ErrorKind::Dimension, "sinkhorn: empty point set");
  if (points.cols() != centroids.cols()) {
    raise(ErrorKind::Dimension, "sinkhorn: dimension mismatch between points and centroids");
  }

  ad::MatT<S> cost = pairwise_sq_dists(points, centroids);
  if (!cost.allFinite()) raise(ErrorKind::Numeric, "sinkhorn: non-finite cost entries");

  const S eps = static_cast<S>(cfg.epsilon);
  const S log_a = -std::log(static_cast<S>(m));
  const S log_b = -std::log(static_cast<S>(k));

  ad::MatT<S> f = ad::MatT<S>::Zero(m, 1);
  ad::MatT<S> g = ad::MatT<S>::Zero(1, k);

  auto lse_rows = [&](const ad::MatT<S>& x) {  // row-wise logsumexp -> m x 1
    ad::MatT<S> mx = x.rowwise().maxCoeff();
    return ad::MatT<S>(
        ((x.colwise() - mx.col(0)).array().exp().rowwise().sum().log() + mx.col(0).array())
            .matrix());
  };

  SinkhornResult<S> result;
  ad::MatT<S> log_plan;
  for (int it = 0; it < cfg.max_iters; ++it) {
    // f update exactly satisfies row marginals; g update then fixes columns.
    ad::MatT<S> gc = ((g.replicate(m, 1) - cost) / eps).eval();
    f = (eps * (S(log_a) - lse_rows(gc).array())).matrix();
    ad::MatT<S> fc = ((f.replicate(1, k) - cost) / eps).transpose().eval();
    g = (eps * (S(log_b) - lse_rows(fc).array())).transpose().matrix();

    log_plan = ((f.replicate(1, k) + g.replicate(m, 1) - cost) / eps).eval();
    ad::MatT<S> plan = log_plan.array().exp().matrix();
    S err = (plan.rowwise().sum().array() - std::exp(log_a)).abs().sum();
    result.iterations = it + 1;
    result.marginal_error = err;
    if (err < static_cast<S>(cfg.tol)) {
      result.converged = true;
      result.plan = std::move(plan);
      break;
    }
    if (it + 1 == cfg.max_iters) result.plan = std::move(plan);
  }
  result.cost = result.plan.cwiseProduct(cost).sum();
  if (!std::isfinite(static_cast<double>(result.cost))) {
    raise(ErrorKind::Numeric, "sinkhorn: non-finite transport cost");
  }
  return result;
}

template <typename S>
struct SinkhornNode {
  ad::Var<S> cost;  // scalar node on the tape
  ad::MatT<S> plan;
  int iterations = 0;
  S marginal_error = S(0);
  bool converged = false;
};

// Differentiable transport cost: gradients flow through the converged plan
// into both the points and the centroids.
template <typename S>
SinkhornNode<S> sinkhorn_distance(ad::Var<S> points, ad::Var<S> centroids,
                                  const SinkhornConfig& cfg) {
  ad::Tape<S>& t = *points.tape;
  SinkhornResult<S> res = sinkhorn(t.val(points), t.val(centroids), cfg);

  ad::MatT<S> cost_val(1, 1);
  cost_val(0, 0) = res.cost;
  bool req = t.needs_grad(points) || t.needs_grad(centroids);
  ad::Var<S> node = t.make_node(
      std::move(cost_val), req,
      [p = points.id, c = centroids.id, plan = res.plan](ad::Tape<S>& t, int id) {
        S g = t.grad_ref(id)(0, 0);
        const auto& V = t.val(p);
        const auto& C = t.val(c);
        if (t.needs_grad(p)) {
          ad::MatT<S> row_mass = plan.rowwise().sum();
          ad::MatT<S> dv =
              S(2) * g * (V.array().colwise() * row_mass.col(0).array()).matrix() -
              S(2) * g * (plan * C);
          t.accum_grad(p, dv);
        }
        if (t.needs_grad(c)) {
          ad::MatT<S> col_mass = plan.colwise().sum().transpose();
          ad::MatT<S> dc =
              S(2) * g * (C.array().colwise() * col_mass.col(0).array()).matrix() -
              S(2) * g * (plan.transpose() * V);
          t.accum_grad(c, dc);
        }
      });

  SinkhornNode<S> out;
  out.cost = node;
  out.plan = std::move(res.plan);
  out.iterations = res.iterations;
  out.marginal_error = res.marginal_error;
  out.converged = res.converged;
  return out;
}

template <typename S>
struct SelectionResult {
  int index = 0;
  ad::MatT<S> centroid;    // 1 x h row of the codebook
  ad::MatT<S> att_scores;  // 1 x k, post-softmax (and dropout when training)
  ad::MatT<S> attended;    // 1 x k scores times value-projected codebook
};

// Cross-attention centroid selection: Q = v Wq, K = C Wk, scores =
// dropout(softmax(Q K^T)); argmax with lowest-index tie break. The value
// projection is computed and carried; selection uses the scores alone.
template <typename S>
SelectionResult<S> select_centroid(const ad::MatT<S>& v, const Codebook<S>& codebook,
                                   const ModelParams<S>& params, bool training,
                                   double dropout_rate, RngStream* rng) {
  const ad::MatT<S>& C = codebook.centroids;
  ad::MatT<S> q = v * params.sel_q;
  ad::MatT<S> keys = C * params.sel_k;
  ad::MatT<S> logits = q * keys.transpose();  // 1 x k

  S mx = logits.maxCoeff();
  ad::MatT<S> scores = (logits.array() - mx).exp().matrix();
  scores /= scores.sum();
  if (training && dropout_rate > 0.0 && rng != nullptr) {
    S keep_inv = S(1.0 / (1.0 - dropout_rate));
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      scores(0, j) = rng->next_double() >= dropout_rate ? scores(0, j) * keep_inv : S(0);
    }
  }

  SelectionResult<S> out;
  out.att_scores = scores;
  out.index = 0;
  S best = scores(0, 0);
  for (Eigen::Index j = 1; j < scores.cols(); ++j) {
    if (scores(0, j) > best) {
      best = scores(0, j);
      out.index = static_cast<int>(j);
    }
  }
  out.centroid = C.row(out.index);
  out.attended = scores * (C * params.sel_v);
  return out;
}

// Quantization with the straight-through surrogate: forward value is the
// selected centroid, gradient is copied to v, none reaches the codebook.
template <typename S>
ad::Var<S> quantize_scope(ad::Var<S> v, const SelectionResult<S>& selection) {
  return ad::straight_through(v, selection.centroid);
}

// h -> d projection of a (quantized) centroid.
template <typename S>
ad::Var<S> up_project(ForwardCtx<S>& ctx, ad::Var<S> factorized) {
  return ad::matmul(factorized, ctx.params.w_up);
}

}  // namespace vulnmatch

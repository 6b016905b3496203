#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "vulnmatch/codebook.hpp"
#include "vulnmatch/metrics.hpp"
#include "vulnmatch/model.hpp"
#include "vulnmatch/tokenizer.hpp"

namespace vulnmatch {

struct MatchResult {
  std::string id;
  double y_hat = 0.0;            // max-pooled function probability
  int best_centroid = 0;         // argmax centroid (lowest index on ties)
  int decision = 0;              // y_hat > 0.5
  std::vector<double> z_hat;     // n mean-pooled statement probabilities
  std::vector<int> z_decisions;  // thresholded at 0.5; all zero when benign

  PredictionRecord to_prediction() const {
    return {id, decision, z_decisions};
  }
};

// Runs every centroid against the function: statement embeddings are shared,
// each centroid is up-projected to the aux row of its own encoder pass.
// Function probability is the max over centroids; a predicted-benign
// function emits exactly the zero statement vector, otherwise statement
// probabilities are the mean over all centroid passes. Evaluation mode
// throughout (dropout off).
template <typename S>
MatchResult match_encoded(const std::string& id, const StatementMatrix& sm,
                          const ModelParams<S>& params, const Codebook<S>& codebook,
                          const ModelConfig& cfg) {
  if (codebook.k() < 1) raise(ErrorKind::Usage, "match: empty codebook");
  ad::Tape<S> tape(/*recording=*/false);
  BoundParams<S> bound = bind(tape, params);
  ForwardCtx<S> ctx{tape, bound, cfg, /*training=*/false, nullptr};

  ad::Var<S> statements = embed_statements(ctx, sm);

  MatchResult result;
  result.id = id;
  int n = cfg.n;
  Eigen::Matrix<double, Eigen::Dynamic, 1> stmt_sum =
      Eigen::Matrix<double, Eigen::Dynamic, 1>::Zero(n);
  double best_prob = -1.0;
  for (int j = 0; j < codebook.k(); ++j) {
    ad::Var<S> centroid = tape.constant(ad::MatT<S>(codebook.centroids.row(j)));
    ad::Var<S> aux = up_project(ctx, centroid);
    ad::Var<S> encoded = encoder_forward(ctx, statements, aux, sm.statement_mask);
    ad::Var<S> y = predict_function(ctx, encoded, sm.statement_mask);
    ad::Var<S> z = predict_statements(ctx, encoded);
    double prob = static_cast<double>(tape.val(y)(0, 0));
    if (prob > best_prob) {
      best_prob = prob;
      result.best_centroid = j;
    }
    for (int row = 0; row < n; ++row) {
      stmt_sum(row) += static_cast<double>(tape.val(z)(row, 0));
    }
  }

  result.y_hat = best_prob;
  result.decision = best_prob > 0.5 ? 1 : 0;
  result.z_hat.assign(static_cast<size_t>(n), 0.0);
  result.z_decisions.assign(static_cast<size_t>(n), 0);
  if (result.decision == 1) {
    for (int row = 0; row < n; ++row) {
      double p = stmt_sum(row) / static_cast<double>(codebook.k());
      result.z_hat[static_cast<size_t>(row)] = p;
      result.z_decisions[static_cast<size_t>(row)] = p > 0.5 ? 1 : 0;
    }
  }
  return result;
}

template <typename S>
MatchResult match(const SourceFunction& func, const Vocab& vocab, const ModelParams<S>& params,
                  const Codebook<S>& codebook, const ModelConfig& cfg) {
  StatementMatrix sm = encode_function(func, vocab, cfg.n, cfg.r);
  return match_encoded(func.id, sm, params, codebook, cfg);
}

}  // namespace vulnmatch

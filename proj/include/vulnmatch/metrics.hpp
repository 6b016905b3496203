#pragma once

#include <string>
#include <vector>

#include "vulnmatch/corpus.hpp"

namespace vulnmatch {

struct LevelMetrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  // 0/0 conventions applied (value defined as 0), flagged per quantity.
  bool precision_zero_div = false;
  bool recall_zero_div = false;
  bool f1_zero_div = false;

  long total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
  LevelMetrics function_level;
  LevelMetrics statement_level;
  // Statements at index >= n are outside the model's window and excluded.
  long excluded_statements = 0;
  // Statement population includes benign functions' statements.
  bool includes_benign_statements = true;
};

// Thresholded predictions for one function, aligned to a gold record by id.
struct PredictionRecord {
  std::string id;
  int function_decision = 0;
  std::vector<int> statement_decisions;
};

LevelMetrics metrics_from_counts(long tp, long fp, long fn, long tn);

// Confusion over functions and over all real statements (index < n_cap) of
// every function, vulnerable and benign alike.
MetricsReport evaluate(const std::vector<PredictionRecord>& predictions,
                       const std::vector<SourceFunction>& golds, int n_cap);

}  // namespace vulnmatch

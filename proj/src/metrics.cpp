#include "vulnmatch/metrics.hpp"

#include <algorithm>
#include <unordered_map>

#include "vulnmatch/errors.hpp"

namespace vulnmatch {

LevelMetrics metrics_from_counts(long tp, long fp, long fn, long tn) {
  LevelMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  long total = tp + fp + fn + tn;
  m.accuracy = total > 0 ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
  if (tp + fp == 0) {
    m.precision = 0.0;
    m.precision_zero_div = true;
  } else {
    m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    m.recall = 0.0;
    m.recall_zero_div = true;
  } else {
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (m.precision + m.recall == 0.0) {
    m.f1 = 0.0;
    m.f1_zero_div = true;
  } else {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

MetricsReport evaluate(const std::vector<PredictionRecord>& predictions,
                       const std::vector<SourceFunction>& golds, int n_cap) {
  if (n_cap < 1) raise(ErrorKind::Usage, "evaluate: n_cap must be >= 1");
  std::unordered_map<std::string, const SourceFunction*> by_id;
  by_id.reserve(golds.size());
  for (const SourceFunction& fn : golds) by_id[fn.id] = &fn;
  if (by_id.size() != golds.size()) {
    raise(ErrorKind::Usage, "evaluate: duplicate gold ids");
  }
  if (predictions.size() != golds.size()) {
    raise(ErrorKind::Usage, "evaluate: prediction and gold counts differ (" +
                                std::to_string(predictions.size()) + " vs " +
                                std::to_string(golds.size()) + ")");
  }

  long ftp = 0, ffp = 0, ffn = 0, ftn = 0;
  long stp = 0, sfp = 0, sfn = 0, stn = 0;
  long excluded = 0;
  for (const PredictionRecord& pred : predictions) {
    auto it = by_id.find(pred.id);
    if (it == by_id.end()) {
      raise(ErrorKind::Usage, "evaluate: prediction id '" + pred.id + "' has no gold record");
    }
    const SourceFunction& gold = *it->second;
    int y = gold.label_y;
    int yhat = pred.function_decision != 0 ? 1 : 0;
    if (y == 1 && yhat == 1) ++ftp;
    if (y == 0 && yhat == 1) ++ffp;
    if (y == 1 && yhat == 0) ++ffn;
    if (y == 0 && yhat == 0) ++ftn;

    int m_real = static_cast<int>(gold.label_z.size());
    int counted = std::min(m_real, n_cap);
    excluded += m_real - counted;
    for (int j = 0; j < counted; ++j) {
      int z = gold.label_z[static_cast<size_t>(j)];
      int zhat = j < static_cast<int>(pred.statement_decisions.size()) &&
                         pred.statement_decisions[static_cast<size_t>(j)] != 0
                     ? 1
                     : 0;
      if (z == 1 && zhat == 1) ++stp;
      if (z == 0 && zhat == 1) ++sfp;
      if (z == 1 && zhat == 0) ++sfn;
      if (z == 0 && zhat == 0) ++stn;
    }
  }

  MetricsReport report;
  report.function_level = metrics_from_counts(ftp, ffp, ffn, ftn);
  report.statement_level = metrics_from_counts(stp, sfp, sfn, stn);
  report.excluded_statements = excluded;
  return report;
}

}  // namespace vulnmatch

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vulnmatch/codebook.hpp"
#include "vulnmatch/errors.hpp"
#include "vulnmatch/model.hpp"

namespace vulnmatch {

// Named tensor payload. Values are stored as little-endian float64 so a
// float-precision run round-trips exactly.
struct ParamRecord {
  std::string name;
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;
};

struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string phase;        // "warmup" or "main"
  std::string config_json;  // resolved config echo
  double best_val_statement_f1 = 0.0;
  int best_epoch = -1;
  bool has_codebook = false;
  std::vector<ParamRecord> records;

  const ParamRecord* find(const std::string& name) const {
    for (const auto& rec : records) {
      if (rec.name == name) return &rec;
    }
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename S>
void pack_params(Checkpoint& ckpt, const ModelParams<S>& params) {
  for_each_param(params, [&](const std::string& name, const ad::MatT<S>& m) {
    ParamRecord rec;
    rec.name = name;
    rec.rows = m.rows();
    rec.cols = m.cols();
    rec.data.reserve(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        rec.data.push_back(static_cast<double>(m(i, j)));
      }
    }
    ckpt.records.push_back(std::move(rec));
  });
}

template <typename S>
void pack_codebook(Checkpoint& ckpt, const Codebook<S>& cb) {
  ParamRecord rec;
  rec.name = "codebook.C";
  rec.rows = cb.centroids.rows();
  rec.cols = cb.centroids.cols();
  for (Eigen::Index i = 0; i < rec.rows; ++i) {
    for (Eigen::Index j = 0; j < rec.cols; ++j) {
      rec.data.push_back(static_cast<double>(cb.centroids(i, j)));
    }
  }
  ckpt.records.push_back(std::move(rec));
  ckpt.has_codebook = true;
}

namespace detail {

template <typename S>
void unpack_into(const ParamRecord& rec, ad::MatT<S>& m) {
  if (rec.rows != m.rows() || rec.cols != m.cols()) {
    raise(ErrorKind::Data, "checkpoint record '" + rec.name + "' has shape " +
                               std::to_string(rec.rows) + "x" + std::to_string(rec.cols) +
                               ", expected " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()));
  }
  size_t idx = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = static_cast<S>(rec.data[idx++]);
    }
  }
}

}  // namespace detail

// Writes checkpoint payloads into pre-shaped parameters (from the config).
template <typename S>
void unpack_params(const Checkpoint& ckpt, ModelParams<S>& params) {
  for_each_param(params, [&](const std::string& name, ad::MatT<S>& m) {
    const ParamRecord* rec = ckpt.find(name);
    if (rec == nullptr) {
      raise(ErrorKind::Data, "checkpoint is missing record '" + name + "'");
    }
    detail::unpack_into(*rec, m);
  });
}

template <typename S>
Codebook<S> unpack_codebook(const Checkpoint& ckpt) {
  const ParamRecord* rec = ckpt.find("codebook.C");
  if (rec == nullptr) raise(ErrorKind::Data, "checkpoint has no codebook record");
  Codebook<S> cb;
  cb.centroids.resize(rec->rows, rec->cols);
  detail::unpack_into(*rec, cb.centroids);
  return cb;
}

}  // namespace vulnmatch

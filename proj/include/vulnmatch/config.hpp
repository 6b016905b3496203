#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "vulnmatch/corpus.hpp"
#include "vulnmatch/model.hpp"

namespace vulnmatch {

enum class Profile { Desk, Full };

inline const char* profile_name(Profile p) {
  return p == Profile::Desk ? "desk" : "full";
}

enum class Phase { Warmup, Main };

inline const char* phase_name(Phase p) { return p == Phase::Warmup ? "warmup" : "main"; }

// Per-phase training settings. Full-profile defaults pin the reference
// hyperparameters; the desk profile scales them down for CPU runs.
struct TrainConfig {
  Phase phase = Phase::Warmup;
  int epochs = 20;
  int batch_size = 64;
  double peak_lr = 1e-4;
  int warmup_steps = 4650;
  double grad_clip_norm = 1.0;
  double lambda_ot = 1.0;
  std::string ablation = "full";  // "full" or "no_codebook"
  int k = 150;                    // centroid count (main phase)
  double sinkhorn_epsilon = 0.05;
  int sinkhorn_max_iters = 200;
  double sinkhorn_tol = 1e-6;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double pos_weight = 0.0;  // 0 disables positive-class weighting

  void validate() const {
    if (epochs < 1) raise(ErrorKind::Config, "train: epochs must be >= 1");
    if (batch_size < 1) raise(ErrorKind::Config, "train: batch_size must be >= 1");
    if (peak_lr <= 0.0) raise(ErrorKind::Config, "train: peak_lr must be > 0");
    if (warmup_steps < 1) raise(ErrorKind::Config, "train: warmup_steps must be >= 1");
    if (grad_clip_norm < 0.0) raise(ErrorKind::Config, "train: grad_clip_norm must be >= 0");
    if (lambda_ot < 0.0) raise(ErrorKind::Config, "train: lambda_ot must be >= 0");
    if (k < 1) raise(ErrorKind::Config, "train: k must be >= 1");
    if (ablation != "full" && ablation != "no_codebook") {
      raise(ErrorKind::Config, "train: unknown ablation '" + ablation + "'");
    }
  }
};

// Fully resolved run configuration; echoed as JSON into every output
// directory so a run is reproducible from its artifacts alone.
struct ResolvedConfig {
  Profile profile = Profile::Full;
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  ModelConfig model;
  TrainConfig warmup;
  TrainConfig main;
  GeneratorSpec generator;
  int vocab_budget = 4096;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
};

ResolvedConfig resolve_profile(Profile profile, uint64_t seed);

std::string resolved_config_to_json(const ResolvedConfig& cfg);
ResolvedConfig resolved_config_from_json(const std::string& text);

// Merges a partial JSON config file over `cfg` (flags still win afterwards).
void apply_config_file(ResolvedConfig& cfg, const std::string& path);

}  // namespace vulnmatch

#include "vulnmatch/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace vulnmatch {

namespace {

using nlohmann::json;

json model_to_json(const ModelConfig& m) {
  return json{{"d", m.d},
              {"h", m.h},
              {"n", m.n},
              {"r", m.r},
              {"q", m.q},
              {"layers", m.layers},
              {"heads", m.heads},
              {"dropout", m.dropout},
              {"vocab_size", m.vocab_size},
              {"pooling", pooling_name(m.pooling)},
              {"positional", m.positional},
              {"ffn_mult", m.ffn_mult}};
}

void model_from_json(const json& j, ModelConfig& m) {
  m.d = j.value("d", m.d);
  m.h = j.value("h", m.h);
  m.n = j.value("n", m.n);
  m.r = j.value("r", m.r);
  m.q = j.value("q", m.q);
  m.layers = j.value("layers", m.layers);
  m.heads = j.value("heads", m.heads);
  m.dropout = j.value("dropout", m.dropout);
  m.vocab_size = j.value("vocab_size", m.vocab_size);
  m.positional = j.value("positional", m.positional);
  m.ffn_mult = j.value("ffn_mult", m.ffn_mult);
  if (j.contains("pooling")) {
    std::string p = j["pooling"].get<std::string>();
    if (p == "rnn") {
      m.pooling = PoolingMode::Rnn;
    } else if (p == "mean") {
      m.pooling = PoolingMode::Mean;
    } else if (p == "max") {
      m.pooling = PoolingMode::Max;
    } else {
      raise(ErrorKind::Config, "unknown pooling mode '" + p + "'");
    }
  }
}

json train_to_json(const TrainConfig& t) {
  return json{{"phase", phase_name(t.phase)},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"peak_lr", t.peak_lr},
              {"warmup_steps", t.warmup_steps},
              {"grad_clip_norm", t.grad_clip_norm},
              {"lambda_ot", t.lambda_ot},
              {"ablation", t.ablation},
              {"k", t.k},
              {"sinkhorn_epsilon", t.sinkhorn_epsilon},
              {"sinkhorn_max_iters", t.sinkhorn_max_iters},
              {"sinkhorn_tol", t.sinkhorn_tol},
              {"weight_decay", t.weight_decay},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"pos_weight", t.pos_weight}};
}

void train_from_json(const json& j, TrainConfig& t) {
  if (j.contains("phase")) {
    std::string p = j["phase"].get<std::string>();
    if (p == "warmup") {
      t.phase = Phase::Warmup;
    } else if (p == "main") {
      t.phase = Phase::Main;
    } else {
      raise(ErrorKind::Config, "unknown phase '" + p + "'");
    }
  }
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.peak_lr = j.value("peak_lr", t.peak_lr);
  t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
  t.grad_clip_norm = j.value("grad_clip_norm", t.grad_clip_norm);
  t.lambda_ot = j.value("lambda_ot", t.lambda_ot);
  t.ablation = j.value("ablation", t.ablation);
  t.k = j.value("k", t.k);
  t.sinkhorn_epsilon = j.value("sinkhorn_epsilon", t.sinkhorn_epsilon);
  t.sinkhorn_max_iters = j.value("sinkhorn_max_iters", t.sinkhorn_max_iters);
  t.sinkhorn_tol = j.value("sinkhorn_tol", t.sinkhorn_tol);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.pos_weight = j.value("pos_weight", t.pos_weight);
}

json generator_to_json(const GeneratorSpec& g) {
  json families = json::array();
  for (const auto& fam : g.pattern_families) {
    families.push_back(json{{"name", fam.name},
                            {"scope_statements", fam.scope_statements},
                            {"filler_statements", fam.filler_statements}});
  }
  return json{{"num_functions", g.num_functions},
              {"vulnerable_ratio", g.vulnerable_ratio},
              {"statements_min", g.statements_min},
              {"statements_max", g.statements_max},
              {"identifier_pool", g.identifier_pool},
              {"seed", g.seed},
              {"pattern_families", families}};
}

void generator_from_json(const json& j, GeneratorSpec& g) {
  g.num_functions = j.value("num_functions", g.num_functions);
  g.vulnerable_ratio = j.value("vulnerable_ratio", g.vulnerable_ratio);
  g.statements_min = j.value("statements_min", g.statements_min);
  g.statements_max = j.value("statements_max", g.statements_max);
  g.seed = j.value("seed", g.seed);
  if (j.contains("identifier_pool")) {
    g.identifier_pool = j["identifier_pool"].get<std::vector<std::string>>();
  }
  if (j.contains("pattern_families")) {
    g.pattern_families.clear();
    for (const auto& fj : j["pattern_families"]) {
      PatternTemplate fam;
      fam.name = fj.at("name").get<std::string>();
      fam.scope_statements = fj.at("scope_statements").get<std::vector<std::string>>();
      fam.filler_statements = fj.at("filler_statements").get<std::vector<std::string>>();
      g.pattern_families.push_back(std::move(fam));
    }
  }
}

json resolved_to_json(const ResolvedConfig& cfg) {
  return json{{"profile", profile_name(cfg.profile)},
              {"seed", cfg.seed},
              {"threads", cfg.threads},
              {"model", model_to_json(cfg.model)},
              {"warmup", train_to_json(cfg.warmup)},
              {"main", train_to_json(cfg.main)},
              {"generator", generator_to_json(cfg.generator)},
              {"vocab_budget", cfg.vocab_budget},
              {"split_ratios", cfg.split_ratios}};
}

void resolved_from_json(const json& j, ResolvedConfig& cfg) {
  if (j.contains("profile")) {
    std::string p = j["profile"].get<std::string>();
    if (p == "desk") {
      cfg.profile = Profile::Desk;
    } else if (p == "full") {
      cfg.profile = Profile::Full;
    } else {
      raise(ErrorKind::Config, "unknown profile '" + p + "'");
    }
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.threads = j.value("threads", cfg.threads);
  if (j.contains("model")) model_from_json(j["model"], cfg.model);
  if (j.contains("warmup")) train_from_json(j["warmup"], cfg.warmup);
  if (j.contains("main")) train_from_json(j["main"], cfg.main);
  if (j.contains("generator")) generator_from_json(j["generator"], cfg.generator);
  cfg.vocab_budget = j.value("vocab_budget", cfg.vocab_budget);
  if (j.contains("split_ratios")) {
    auto r = j["split_ratios"].get<std::vector<double>>();
    if (r.size() != 3) raise(ErrorKind::Config, "split_ratios must hold 3 values");
    cfg.split_ratios = {r[0], r[1], r[2]};
  }
}

}  // namespace

ResolvedConfig resolve_profile(Profile profile, uint64_t seed) {
  ResolvedConfig cfg;
  cfg.profile = profile;
  cfg.seed = seed;

  cfg.model.d = 64;
  cfg.model.h = 16;
  cfg.model.layers = 2;
  cfg.model.heads = 4;
  cfg.model.dropout = 0.1;

  cfg.generator.pattern_families = default_pattern_families();
  cfg.generator.identifier_pool = default_identifier_pool();
  cfg.generator.seed = seed;

  if (profile == Profile::Full) {
    cfg.model.n = 155;
    cfg.model.r = 20;
    cfg.model.q = 12;
    for (TrainConfig* t : {&cfg.warmup, &cfg.main}) {
      t->epochs = 20;
      t->batch_size = 64;
      t->peak_lr = 1e-4;
      t->warmup_steps = 4650;
      t->grad_clip_norm = 1.0;
      t->k = 150;
    }
  } else {
    cfg.model.n = 32;
    cfg.model.r = 12;
    cfg.model.q = 4;
    for (TrainConfig* t : {&cfg.warmup, &cfg.main}) {
      t->epochs = 10;
      t->batch_size = 16;
      t->peak_lr = 1e-3;
      t->warmup_steps = 200;
      t->grad_clip_norm = 1.0;
      t->k = 8;
    }
    cfg.generator.num_functions = 2000;
    cfg.generator.vulnerable_ratio = 0.1;
  }
  cfg.warmup.phase = Phase::Warmup;
  cfg.main.phase = Phase::Main;
  return cfg;
}

std::string resolved_config_to_json(const ResolvedConfig& cfg) {
  return resolved_to_json(cfg).dump(2);
}

ResolvedConfig resolved_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    raise(ErrorKind::Config, "invalid config JSON");
  }
  ResolvedConfig cfg;
  resolved_from_json(j, cfg);
  return cfg;
}

void apply_config_file(ResolvedConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Config, "cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j = json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    raise(ErrorKind::Config, "config file is not a JSON object: " + path);
  }
  resolved_from_json(j, cfg);
}

}  // namespace vulnmatch

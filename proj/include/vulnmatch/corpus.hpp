#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vulnmatch {

// One labeled code function. label_z flags vulnerable statements; label_y is
// 1 exactly when any statement is flagged.
struct SourceFunction {
  std::string id;
  std::string code;
  std::vector<std::string> statements;
  int label_y = 0;
  std::vector<int> label_z;
  std::vector<std::string> tags;
};

// A vulnerability pattern family: the statements that form the vulnerable
// scope plus benign filler templates. Identifiers are written as {name}
// placeholders and bound per generated function.
struct PatternTemplate {
  std::string name;
  std::vector<std::string> scope_statements;
  std::vector<std::string> filler_statements;
};

struct GeneratorSpec {
  int num_functions = 2000;
  double vulnerable_ratio = 0.1;
  std::vector<PatternTemplate> pattern_families;
  int statements_min = 6;
  int statements_max = 14;
  std::vector<std::string> identifier_pool;
  uint64_t seed = 1;
};

struct CorpusSplit {
  std::vector<SourceFunction> train;
  std::vector<SourceFunction> validation;
  std::vector<SourceFunction> test;
};

struct RecordError {
  int line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<SourceFunction> functions;
  std::vector<RecordError> errors;
};

// Reads line-delimited records ({"id", "code", "statement_labels"}), deriving
// statements with the segmentation rule and label_y from the labels.
// Malformed lines are reported with their line numbers; a file with zero
// valid records is a load error.
LoadResult load_records(const std::string& path);

void write_records(const std::string& path, const std::vector<SourceFunction>& functions);

// Deterministic synthetic corpus: exactly round(ratio * num) vulnerable
// functions, each embedding one family's scope at a random position with
// identifiers renamed from the pool.
std::vector<SourceFunction> synthesize_corpus(const GeneratorSpec& spec);

// Seeded shuffle then partition; partitions are disjoint and exhaustive.
CorpusSplit split_corpus(std::vector<SourceFunction> corpus,
                         const std::array<double, 3>& ratios, uint64_t seed);

// Ascending indices of vulnerable statements; empty for benign functions.
std::vector<int> extract_scope(const SourceFunction& func);

std::vector<PatternTemplate> default_pattern_families();
std::vector<std::string> default_identifier_pool();

}  // namespace vulnmatch

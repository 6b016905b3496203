#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vulnmatch/corpus.hpp"

namespace vulnmatch {

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Byte-level BPE vocabulary. Words carry a leading marker symbol so decoding
// reconstructs the whitespace-normalized statement exactly. Specials are
// pinned: PAD = 0, UNK = 1.
struct Vocab {
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  std::vector<std::pair<std::string, std::string>> merges;
  std::vector<std::string> base_symbols;
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnkId : it->second;
  }
};

// Fixed-shape token grid for one function: n statements x r token slots.
struct StatementMatrix {
  IdMatrix ids;                          // n x r, PAD-filled
  std::vector<uint8_t> statement_mask;   // length n, 1 = real statement
  std::vector<int> token_counts;         // per-statement real tokens, <= r
};

// Token grid for the vulnerable scope: q rows. Benign functions carry no
// rows at all; the model substitutes its learnable stand-in embedding.
struct ScopeMatrix {
  IdMatrix ids;                     // q x r
  std::vector<uint8_t> scope_mask;  // length q
  bool is_benign = false;
};

// One statement per physical line, whitespace-normalized, blanks dropped.
std::vector<std::string> segment_statements(const std::string& code);

// Greedy highest-frequency pair merging over marker-prefixed byte symbols;
// frequency ties break lexicographically, so training is deterministic.
Vocab train_bpe(const std::vector<std::string>& statements, int vocab_size);
Vocab train_bpe(const std::vector<SourceFunction>& corpus, int vocab_size);

std::vector<int> encode_statement(const Vocab& vocab, const std::string& statement);
std::string decode(const Vocab& vocab, std::span<const int> ids);

StatementMatrix encode_function(const SourceFunction& func, const Vocab& vocab, int n, int r);
ScopeMatrix encode_scope(const SourceFunction& func, const Vocab& vocab, int q, int r);

void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

}  // namespace vulnmatch

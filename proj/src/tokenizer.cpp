#include "vulnmatch/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "vulnmatch/errors.hpp"

namespace vulnmatch {

namespace {

// Word-start marker (U+2581), sentencepiece style. Statements never contain
// it, so decode can turn it back into a single space.
const std::string kMarker = "\xe2\x96\x81";

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::string normalize_line(const std::string& line) {
  std::string out;
  out.reserve(line.size());
  bool in_space = true;  // trims leading whitespace
  for (char c : line) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
      if (!in_space) out += ' ';
      in_space = true;
    } else {
      out += c;
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// Splits a normalized statement into pretokens: identifier/number runs or
// single symbol bytes. The first pretoken of each space-delimited word is
// marked so whitespace survives a round trip.
struct Pretoken {
  std::string text;
  bool word_start = false;
};

std::vector<Pretoken> pretokenize(const std::string& statement) {
  std::vector<Pretoken> out;
  size_t i = 0;
  bool at_word_start = true;
  while (i < statement.size()) {
    char c = statement[i];
    if (c == ' ') {
      at_word_start = true;
      ++i;
      continue;
    }
    Pretoken p;
    p.word_start = at_word_start;
    at_word_start = false;
    if (is_word_char(c)) {
      size_t j = i;
      while (j < statement.size() && is_word_char(statement[j])) ++j;
      p.text = statement.substr(i, j - i);
      i = j;
    } else {
      p.text = statement.substr(i, 1);
      ++i;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::string> to_symbols(const Pretoken& p) {
  std::vector<std::string> symbols;
  symbols.reserve(p.text.size() + 1);
  if (p.word_start) symbols.push_back(kMarker);
  for (char c : p.text) symbols.emplace_back(1, c);
  return symbols;
}

struct PairHash {
  size_t operator()(const std::pair<std::string, std::string>& p) const {
    std::hash<std::string> h;
    return h(p.first) * 1315423911u ^ h(p.second);
  }
};

}  // namespace

std::vector<std::string> segment_statements(const std::string& code) {
  if (code.empty()) raise(ErrorKind::Data, "segmentation: empty text");
  std::vector<std::string> statements;
  std::string line;
  std::istringstream in(code);
  while (std::getline(in, line)) {
    std::string norm = normalize_line(line);
    if (!norm.empty()) statements.push_back(std::move(norm));
  }
  if (statements.empty()) {
    raise(ErrorKind::Data, "segmentation: text has zero non-blank lines");
  }
  return statements;
}

Vocab train_bpe(const std::vector<std::string>& statements, int vocab_size) {
  if (statements.empty()) raise(ErrorKind::Data, "train_bpe: empty corpus");

  // Unique pretokens with frequencies, as working symbol sequences.
  std::map<std::string, int64_t> word_freq;  // key: marker-prefixed text
  for (const std::string& stmt : statements) {
    for (const Pretoken& p : pretokenize(normalize_line(stmt))) {
      word_freq[(p.word_start ? kMarker : "") + p.text] += 1;
    }
  }

  struct Word {
    std::vector<std::string> symbols;
    int64_t freq;
  };
  std::vector<Word> words;
  words.reserve(word_freq.size());
  std::map<std::string, int64_t> base_freq;
  for (const auto& [text, freq] : word_freq) {
    Word w;
    w.freq = freq;
    size_t i = 0;
    if (text.compare(0, kMarker.size(), kMarker) == 0) {
      w.symbols.push_back(kMarker);
      i = kMarker.size();
    }
    for (; i < text.size(); ++i) w.symbols.emplace_back(1, text[i]);
    for (const auto& s : w.symbols) base_freq[s] += freq;
    words.push_back(std::move(w));
  }

  Vocab vocab;
  vocab.id_to_token = {"<pad>", "<unk>"};
  for (const auto& [sym, freq] : base_freq) {
    vocab.base_symbols.push_back(sym);
    vocab.id_to_token.push_back(sym);
  }
  int64_t budget = vocab_size - vocab.size();
  if (budget <= 0) {
    raise(ErrorKind::Config, "train_bpe: vocab_size " + std::to_string(vocab_size) +
                                 " does not exceed the " + std::to_string(vocab.size()) +
                                 " base symbols and specials");
  }

  using Pair = std::pair<std::string, std::string>;
  while (budget > 0) {
    std::map<Pair, int64_t> pair_freq;
    for (const Word& w : words) {
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_freq[{w.symbols[i], w.symbols[i + 1]}] += w.freq;
      }
    }
    if (pair_freq.empty()) break;
    // std::map iterates keys in lexicographic order, so the first maximal
    // entry is already the lexicographically smallest tie.
    Pair best;
    int64_t best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq) {
        best_freq = freq;
        best = pair;
      }
    }
    std::string merged = best.first + best.second;
    for (Word& w : words) {
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      size_t i = 0;
      while (i < w.symbols.size()) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == best.first &&
            w.symbols[i + 1] == best.second) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(w.symbols[i]);
          ++i;
        }
      }
      w.symbols = std::move(next);
    }
    vocab.merges.push_back(best);
    if (std::find(vocab.id_to_token.begin(), vocab.id_to_token.end(), merged) ==
        vocab.id_to_token.end()) {
      vocab.id_to_token.push_back(merged);
      --budget;
    }
  }

  for (size_t i = 0; i < vocab.id_to_token.size(); ++i) {
    vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);
  }
  return vocab;
}

Vocab train_bpe(const std::vector<SourceFunction>& corpus, int vocab_size) {
  std::vector<std::string> statements;
  for (const SourceFunction& fn : corpus) {
    statements.insert(statements.end(), fn.statements.begin(), fn.statements.end());
  }
  return train_bpe(statements, vocab_size);
}

std::vector<int> encode_statement(const Vocab& vocab, const std::string& statement) {
  std::unordered_map<std::pair<std::string, std::string>, size_t, PairHash> rank;
  rank.reserve(vocab.merges.size());
  for (size_t i = 0; i < vocab.merges.size(); ++i) {
    rank.emplace(vocab.merges[i], i);
  }

  std::vector<int> ids;
  for (const Pretoken& p : pretokenize(normalize_line(statement))) {
    std::vector<std::string> symbols = to_symbols(p);
    while (symbols.size() > 1) {
      size_t best_rank = vocab.merges.size();
      size_t best_pos = symbols.size();
      for (size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = rank.find({symbols[i], symbols[i + 1]});
        if (it != rank.end() && it->second < best_rank) {
          best_rank = it->second;
          best_pos = i;
        }
      }
      if (best_pos == symbols.size()) break;
      symbols[best_pos] += symbols[best_pos + 1];
      symbols.erase(symbols.begin() + static_cast<long>(best_pos) + 1);
    }
    for (const std::string& s : symbols) ids.push_back(vocab.id_of(s));
  }
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const int> ids) {
  std::string text;
  for (int id : ids) {
    if (id == Vocab::kPadId) continue;
    if (id < 0 || id >= vocab.size()) {
      raise(ErrorKind::Data, "decode: id " + std::to_string(id) + " out of range");
    }
    text += id == Vocab::kUnkId ? "<unk>" : vocab.id_to_token[static_cast<size_t>(id)];
  }
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, kMarker.size(), kMarker) == 0) {
      if (!out.empty()) out += ' ';
      i += kMarker.size();
    } else {
      out += text[i];
      ++i;
    }
  }
  return out;
}

StatementMatrix encode_function(const SourceFunction& func, const Vocab& vocab, int n, int r) {
  if (n < 1 || r < 1) raise(ErrorKind::Config, "encode_function: n and r must be >= 1");
  StatementMatrix sm;
  sm.ids = IdMatrix::Constant(n, r, Vocab::kPadId);
  sm.statement_mask.assign(static_cast<size_t>(n), 0);
  sm.token_counts.assign(static_cast<size_t>(n), 0);
  int rows = std::min<int>(n, static_cast<int>(func.statements.size()));
  for (int j = 0; j < rows; ++j) {
    std::vector<int> ids = encode_statement(vocab, func.statements[static_cast<size_t>(j)]);
    int count = std::min<int>(r, static_cast<int>(ids.size()));
    for (int tkn = 0; tkn < count; ++tkn) sm.ids(j, tkn) = ids[static_cast<size_t>(tkn)];
    sm.statement_mask[static_cast<size_t>(j)] = 1;
    sm.token_counts[static_cast<size_t>(j)] = count;
  }
  return sm;
}

ScopeMatrix encode_scope(const SourceFunction& func, const Vocab& vocab, int q, int r) {
  if (q < 1 || r < 1) raise(ErrorKind::Config, "encode_scope: q and r must be >= 1");
  ScopeMatrix pm;
  pm.ids = IdMatrix::Constant(q, r, Vocab::kPadId);
  pm.scope_mask.assign(static_cast<size_t>(q), 0);
  std::vector<int> scope = extract_scope(func);
  if (scope.empty()) {
    pm.is_benign = true;
    return pm;
  }
  int rows = std::min<int>(q, static_cast<int>(scope.size()));
  for (int j = 0; j < rows; ++j) {
    const std::string& stmt = func.statements[static_cast<size_t>(scope[static_cast<size_t>(j)])];
    std::vector<int> ids = encode_statement(vocab, stmt);
    int count = std::min<int>(r, static_cast<int>(ids.size()));
    for (int tkn = 0; tkn < count; ++tkn) pm.ids(j, tkn) = ids[static_cast<size_t>(tkn)];
    pm.scope_mask[static_cast<size_t>(j)] = 1;
  }
  return pm;
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write vocab file: " + path);
  out << "vmvocab 1\n";
  out << "specials <pad> <unk>\n";
  out << "base " << vocab.base_symbols.size() << "\n";
  for (const std::string& s : vocab.base_symbols) out << s << "\n";
  out << "merges " << vocab.merges.size() << "\n";
  for (const auto& [a, b] : vocab.merges) out << a << "\t" << b << "\n";
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open vocab file: " + path);
  std::string line;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) raise(ErrorKind::Data, "vocab file truncated: " + path);
    return line;
  };
  if (next_line() != "vmvocab 1") raise(ErrorKind::Data, "vocab file header mismatch");
  if (next_line() != "specials <pad> <unk>") raise(ErrorKind::Data, "vocab specials mismatch");

  Vocab vocab;
  vocab.id_to_token = {"<pad>", "<unk>"};
  std::istringstream base_hdr(next_line());
  std::string word;
  size_t base_count = 0;
  base_hdr >> word >> base_count;
  if (word != "base") raise(ErrorKind::Data, "vocab base header mismatch");
  for (size_t i = 0; i < base_count; ++i) {
    std::string sym = next_line();
    vocab.base_symbols.push_back(sym);
    vocab.id_to_token.push_back(sym);
  }
  std::istringstream merge_hdr(next_line());
  size_t merge_count = 0;
  merge_hdr >> word >> merge_count;
  if (word != "merges") raise(ErrorKind::Data, "vocab merges header mismatch");
  for (size_t i = 0; i < merge_count; ++i) {
    std::string entry = next_line();
    size_t tab = entry.find('\t');
    if (tab == std::string::npos) raise(ErrorKind::Data, "vocab merge entry malformed");
    std::string a = entry.substr(0, tab);
    std::string b = entry.substr(tab + 1);
    vocab.merges.emplace_back(a, b);
    std::string merged = a + b;
    if (std::find(vocab.id_to_token.begin(), vocab.id_to_token.end(), merged) ==
        vocab.id_to_token.end()) {
      vocab.id_to_token.push_back(merged);
    }
  }
  for (size_t i = 0; i < vocab.id_to_token.size(); ++i) {
    vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);
  }
  return vocab;
}

}  // namespace vulnmatch

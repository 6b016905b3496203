#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "vulnmatch/corpus.hpp"
#include "vulnmatch/errors.hpp"
#include "vulnmatch/tokenizer.hpp"

using namespace vulnmatch;

namespace {

std::vector<std::string> toy_statements() {
  return {
      "int count = 0;",
      "for (int idx = 0; idx < limit; idx++) {",
      "buffer[idx] = input[idx];",
      "}",
      "if (count > limit) {",
      "return count;",
      "count = count + 1;",
      "char *ptr = (char *)malloc(size);",
      "memcpy(ptr, input, size);",
      "free(ptr);",
      "printf(\"%d\\n\", count);",
      "total += value;",
      "int width = depth * 3;",
      "width--;",
      "unsigned short n = count * size;",
      "int *arr = (int *)malloc(n);",
      "arr[count - 1] = 0;",
      "snprintf(buffer, 128, fmt);",
      "syslog(LOG_INFO, buffer);",
      "return 0;",
  };
}

}  // namespace

TEST_CASE("segment_statements drops blank lines and normalizes whitespace") {
  auto s = segment_statements("a=1;\n\nb=2;");
  REQUIRE(s.size() == 2);
  CHECK(s[0] == "a=1;");
  CHECK(s[1] == "b=2;");

  auto one = segment_statements("  return   x ;  ");
  REQUIRE(one.size() == 1);
  CHECK(one[0] == "return x ;");

  CHECK_THROWS_AS(segment_statements("\n   \n\t\n"), Error);
}

TEST_CASE("a nine-line function segments into nine statements") {
  std::string code =
      "void writeToBuffer(char *data, int offset) {\n"
      "char buffer[20];\n"
      "int i = 0;\n"
      "\n"
      "for (i = 0; i + offset <= 20; i++) {\n"
      "buffer[offset + i] = data[i];\n"
      "}\n"
      "\n"
      "process(buffer);\n"
      "return;\n"
      "}\n";
  CHECK(segment_statements(code).size() == 9);
}

TEST_CASE("train_bpe on 'aaaa' with budget for one merge merges (a,a)") {
  // Specials (2) + base symbols (marker, 'a') + one merge slot.
  Vocab vocab = train_bpe(std::vector<std::string>{"aaaa"}, 5);
  REQUIRE(!vocab.merges.empty());
  CHECK(vocab.merges[0].first == "a");
  CHECK(vocab.merges[0].second == "a");
  CHECK(vocab.size() == 5);
}

TEST_CASE("train_bpe is deterministic") {
  auto stmts = toy_statements();
  Vocab a = train_bpe(stmts, 120);
  Vocab b = train_bpe(stmts, 120);
  CHECK(a.merges == b.merges);
  CHECK(a.id_to_token == b.id_to_token);
}

TEST_CASE("train_bpe rejects a vocab budget below the base symbols") {
  CHECK_THROWS_AS(train_bpe(toy_statements(), 10), Error);
}

TEST_CASE("vocab 300 re-encodes the toy corpus with zero UNK") {
  auto stmts = toy_statements();
  Vocab vocab = train_bpe(stmts, 300);
  for (const auto& stmt : stmts) {
    std::vector<int> ids = encode_statement(vocab, stmt);
    CHECK(!ids.empty());
    for (int id : ids) {
      CHECK(id != Vocab::kUnkId);
      CHECK(id >= 0);
      CHECK(id < vocab.size());
    }
  }
}

TEST_CASE("decode of encode reproduces normalized statements") {
  auto stmts = toy_statements();
  Vocab vocab = train_bpe(stmts, 300);
  for (const auto& stmt : stmts) {
    std::vector<int> ids = encode_statement(vocab, stmt);
    CHECK(decode(vocab, ids) == stmt);
  }
}

TEST_CASE("encode_function truncates and pads to the configured grid") {
  Vocab vocab = train_bpe(toy_statements(), 300);

  SourceFunction fn;
  fn.statements = {"int count = 0;", "count = count + 1;", "return count;"};
  fn.label_z = {0, 0, 0};
  StatementMatrix sm = encode_function(fn, vocab, 155, 20);
  CHECK(sm.ids.rows() == 155);
  CHECK(sm.ids.cols() == 20);
  int mask_sum = 0;
  for (auto m : sm.statement_mask) mask_sum += m;
  CHECK(mask_sum == 3);
  for (int j = 3; j < 155; ++j) {
    CHECK(sm.statement_mask[static_cast<size_t>(j)] == 0);
    for (int tkn = 0; tkn < 20; ++tkn) CHECK(sm.ids(j, tkn) == Vocab::kPadId);
  }
  for (int j = 0; j < 3; ++j) CHECK(sm.token_counts[static_cast<size_t>(j)] >= 1);
}

TEST_CASE("statements longer than r keep their first r token ids") {
  Vocab vocab = train_bpe(toy_statements(), 300);
  SourceFunction fn;
  // Long statement: every token is a separate short word.
  std::string stmt;
  for (int i = 0; i < 25; ++i) stmt += "count + ";
  stmt += "count;";
  fn.statements = {stmt};
  fn.label_z = {0};

  std::vector<int> full = encode_statement(vocab, stmt);
  REQUIRE(full.size() > 20);
  StatementMatrix sm = encode_function(fn, vocab, 4, 20);
  CHECK(sm.token_counts[0] == 20);
  for (int tkn = 0; tkn < 20; ++tkn) CHECK(sm.ids(0, tkn) == full[static_cast<size_t>(tkn)]);
}

TEST_CASE("statement count in the mask is min(m_real, n)") {
  Vocab vocab = train_bpe(toy_statements(), 300);
  GeneratorSpec spec;
  spec.num_functions = 30;
  spec.vulnerable_ratio = 0.2;
  spec.pattern_families = default_pattern_families();
  spec.identifier_pool = default_identifier_pool();
  spec.seed = 17;
  for (const auto& fn : synthesize_corpus(spec)) {
    StatementMatrix sm = encode_function(fn, vocab, 8, 12);
    int mask_sum = 0;
    for (auto m : sm.statement_mask) mask_sum += m;
    CHECK(mask_sum == std::min<int>(8, static_cast<int>(fn.statements.size())));
  }
}

TEST_CASE("encode_scope caps rows at q and flags benign functions") {
  Vocab vocab = train_bpe(toy_statements(), 300);

  SourceFunction fn;
  for (int i = 0; i < 16; ++i) fn.statements.push_back("count = count + 1;");
  fn.label_z.assign(16, 0);
  fn.label_z[2] = 1;
  fn.label_z[5] = 1;
  fn.label_y = 1;
  ScopeMatrix two = encode_scope(fn, vocab, 12, 20);
  CHECK_FALSE(two.is_benign);
  int mask_sum = 0;
  for (auto m : two.scope_mask) mask_sum += m;
  CHECK(mask_sum == 2);

  SourceFunction wide = fn;
  wide.label_z.assign(16, 1);  // 16 vulnerable statements > q = 12
  ScopeMatrix capped = encode_scope(wide, vocab, 12, 20);
  mask_sum = 0;
  for (auto m : capped.scope_mask) mask_sum += m;
  CHECK(mask_sum == 12);

  SourceFunction benign = fn;
  benign.label_z.assign(16, 0);
  benign.label_y = 0;
  ScopeMatrix pb = encode_scope(benign, vocab, 12, 20);
  CHECK(pb.is_benign);
  for (auto m : pb.scope_mask) CHECK(m == 0);
}

TEST_CASE("encoding is deterministic and ids stay inside the vocab") {
  auto stmts = toy_statements();
  Vocab vocab = train_bpe(stmts, 200);
  SourceFunction fn;
  fn.statements = stmts;
  fn.label_z.assign(stmts.size(), 0);
  StatementMatrix a = encode_function(fn, vocab, 32, 12);
  StatementMatrix b = encode_function(fn, vocab, 32, 12);
  CHECK(a.ids == b.ids);
  CHECK(a.statement_mask == b.statement_mask);
  CHECK((a.ids.array() >= 0).all());
  CHECK((a.ids.array() < vocab.size()).all());
}

TEST_CASE("vocab file round trip preserves encodings") {
  auto stmts = toy_statements();
  Vocab vocab = train_bpe(stmts, 250);
  std::string path = "/tmp/vulnmatch_test_vocab.txt";
  save_vocab(path, vocab);
  Vocab loaded = load_vocab(path);
  CHECK(loaded.size() == vocab.size());
  for (const auto& stmt : stmts) {
    CHECK(encode_statement(loaded, stmt) == encode_statement(vocab, stmt));
  }
  std::remove(path.c_str());

  // A truncated file is a data error.
  std::string broken = "/tmp/vulnmatch_test_vocab_broken.txt";
  {
    std::ofstream out(broken, std::ios::binary);
    out << "vmvocab 1\nspecials <pad> <unk>\nbase 5\na\n";
  }
  CHECK_THROWS_AS(load_vocab(broken), Error);
  std::remove(broken.c_str());
}

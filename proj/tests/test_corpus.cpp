#include "doctest.h"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "vulnmatch/corpus.hpp"
#include "vulnmatch/errors.hpp"

using namespace vulnmatch;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = std::string("/tmp/vulnmatch_test_") + name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

GeneratorSpec small_spec(int num = 100, double ratio = 0.1, uint64_t seed = 7) {
  GeneratorSpec spec;
  spec.num_functions = num;
  spec.vulnerable_ratio = ratio;
  spec.pattern_families = default_pattern_families();
  spec.identifier_pool = default_identifier_pool();
  spec.seed = seed;
  return spec;
}

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Independent template matcher: does `stmt` equal `tmpl` with every {name}
// placeholder consistently bound to one identifier?
bool match_template(const std::string& tmpl, const std::string& stmt,
                    std::map<std::string, std::string>& binding) {
  auto placeholder_end = [&](size_t ti) -> size_t {
    size_t close = tmpl.find('}', ti);
    if (close == std::string::npos || close == ti + 1) return std::string::npos;
    for (size_t k = ti + 1; k < close; ++k) {
      if (!is_ident_char(tmpl[k])) return std::string::npos;
    }
    return close;
  };
  size_t ti = 0, si = 0;
  while (ti < tmpl.size()) {
    size_t close = tmpl[ti] == '{' ? placeholder_end(ti) : std::string::npos;
    if (close != std::string::npos) {
      std::string name = tmpl.substr(ti + 1, close - ti - 1);
      size_t sj = si;
      while (sj < stmt.size() && is_ident_char(stmt[sj])) ++sj;
      if (sj == si) return false;
      std::string ident = stmt.substr(si, sj - si);
      auto it = binding.find(name);
      if (it == binding.end()) {
        binding[name] = ident;
      } else if (it->second != ident) {
        return false;
      }
      ti = close + 1;
      si = sj;
    } else {
      if (si >= stmt.size() || stmt[si] != tmpl[ti]) return false;
      ++ti;
      ++si;
    }
  }
  return si == stmt.size();
}

bool scope_matches_family(const SourceFunction& fn, const PatternTemplate& family) {
  std::vector<int> scope = extract_scope(fn);
  if (scope.size() != family.scope_statements.size()) return false;
  std::map<std::string, std::string> binding;
  for (size_t j = 0; j < scope.size(); ++j) {
    if (!match_template(family.scope_statements[j],
                        fn.statements[static_cast<size_t>(scope[j])], binding)) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("load_records derives function labels from statement labels") {
  std::string path = write_temp(
      "labels.jsonl",
      R"({"id":"a","code":"x = 1;\ny = 2;\nz = 3;\nw = 4;","statement_labels":[0,1,1,0]})"
      "\n"
      R"({"id":"b","code":"x = 1;\ny = 2;","statement_labels":[0,0]})"
      "\n");
  LoadResult res = load_records(path);
  REQUIRE(res.functions.size() == 2);
  CHECK(res.errors.empty());
  CHECK(res.functions[0].label_y == 1);
  CHECK(res.functions[1].label_y == 0);
  std::remove(path.c_str());
}

TEST_CASE("load_records reports malformed lines with their numbers") {
  std::string path = write_temp(
      "broken.jsonl",
      R"({"id":"a","code":"x = 1;","statement_labels":[0]})"
      "\n"
      R"({"id":"b","statement_labels":[0]})"
      "\n"
      R"({"id":"c","code":"y = 2;","statement_labels":[1]})"
      "\n");
  LoadResult res = load_records(path);
  CHECK(res.functions.size() == 2);
  REQUIRE(res.errors.size() == 1);
  CHECK(res.errors[0].line == 2);
  CHECK(res.errors[0].message.find("code") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("load_records rejects label/statement length mismatch and empty files") {
  std::string path = write_temp(
      "mismatch.jsonl",
      R"({"id":"a","code":"x = 1;\ny = 2;","statement_labels":[0]})"
      "\n");
  CHECK_THROWS_AS(load_records(path), Error);  // zero valid records
  std::remove(path.c_str());

  path = write_temp(
      "mismatch2.jsonl",
      R"({"id":"a","code":"x = 1;\ny = 2;","statement_labels":[0]})"
      "\n"
      R"({"id":"b","code":"x = 1;","statement_labels":[0]})"
      "\n");
  LoadResult res = load_records(path);
  CHECK(res.functions.size() == 1);
  REQUIRE(res.errors.size() == 1);
  CHECK(res.errors[0].line == 1);
  std::remove(path.c_str());
}

TEST_CASE("synthesize_corpus plants the requested number of vulnerable functions") {
  std::vector<SourceFunction> corpus = synthesize_corpus(small_spec(100, 0.1));
  int vul = 0;
  for (const auto& fn : corpus) vul += fn.label_y;
  CHECK(corpus.size() == 100);
  CHECK(vul == 10);
}

TEST_CASE("synthesize_corpus is a pure function of its spec") {
  GeneratorSpec spec = small_spec(60, 0.2, 1234);
  auto a = synthesize_corpus(spec);
  auto b = synthesize_corpus(spec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].code == b[i].code);
    CHECK(a[i].label_z == b[i].label_z);
  }

  std::string p1 = write_temp("det1.jsonl", "");
  std::string p2 = write_temp("det2.jsonl", "");
  write_records(p1, a);
  write_records(p2, b);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(!s1.empty());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("two-statement family marks exactly two statements per vulnerable function") {
  GeneratorSpec spec = small_spec(50, 0.3, 3);
  spec.pattern_families = {default_pattern_families()[0]};  // oob_write, 2 statements
  auto corpus = synthesize_corpus(spec);
  for (const auto& fn : corpus) {
    if (fn.label_y == 0) continue;
    int sum = 0;
    for (int z : fn.label_z) sum += z;
    CHECK(sum == 2);
  }
}

TEST_CASE("planted scopes match their family templates up to renaming") {
  auto corpus = synthesize_corpus(small_spec(200, 0.25, 99));
  auto families = default_pattern_families();
  for (const auto& fn : corpus) {
    if (fn.label_y == 0) continue;
    bool matched = false;
    for (const auto& family : families) {
      if (scope_matches_family(fn, family)) {
        matched = true;
        break;
      }
    }
    CHECK_MESSAGE(matched, "function ", fn.id, " does not match any family");
  }
}

TEST_CASE("label_y equals max of label_z on every generated function") {
  auto corpus = synthesize_corpus(small_spec(120, 0.15, 5));
  for (const auto& fn : corpus) {
    int mx = 0;
    for (int z : fn.label_z) mx = std::max(mx, z);
    CHECK(fn.label_y == mx);
    CHECK(fn.label_z.size() == fn.statements.size());
    CHECK(!fn.statements.empty());
  }
}

TEST_CASE("generator rejects a statement range that cannot host the largest scope") {
  GeneratorSpec spec = small_spec();
  spec.statements_min = 2;  // int_overflow_alloc needs 4
  spec.statements_max = 3;
  CHECK_THROWS_AS(synthesize_corpus(spec), Error);
}

TEST_CASE("split_corpus partitions 100 functions as 80/10/10") {
  auto corpus = synthesize_corpus(small_spec(100, 0.1));
  CorpusSplit split = split_corpus(corpus, {0.8, 0.1, 0.1}, 42);
  CHECK(split.train.size() == 80);
  CHECK(split.validation.size() == 10);
  CHECK(split.test.size() == 10);
}

TEST_CASE("split_corpus rounds 10 functions to 8/1/1") {
  auto corpus = synthesize_corpus(small_spec(10, 0.2));
  CorpusSplit split = split_corpus(corpus, {0.8, 0.1, 0.1}, 42);
  CHECK(split.train.size() == 8);
  CHECK(split.validation.size() == 1);
  CHECK(split.test.size() == 1);
}

TEST_CASE("split_corpus is deterministic, disjoint, and exhaustive") {
  auto corpus = synthesize_corpus(small_spec(73, 0.2, 8));
  auto ids_of = [](const std::vector<SourceFunction>& fns) {
    std::set<std::string> ids;
    for (const auto& fn : fns) ids.insert(fn.id);
    return ids;
  };
  CorpusSplit a = split_corpus(corpus, {0.8, 0.1, 0.1}, 11);
  CorpusSplit b = split_corpus(corpus, {0.8, 0.1, 0.1}, 11);
  CHECK(ids_of(a.train) == ids_of(b.train));
  CHECK(ids_of(a.validation) == ids_of(b.validation));
  CHECK(ids_of(a.test) == ids_of(b.test));

  std::set<std::string> all = ids_of(a.train);
  size_t before = all.size();
  for (const auto& s : {ids_of(a.validation), ids_of(a.test)}) {
    for (const auto& id : s) all.insert(id);
    before += s.size();
  }
  CHECK(all.size() == before);          // disjoint
  CHECK(all.size() == corpus.size());   // exhaustive
}

TEST_CASE("extract_scope lists vulnerable statement indices in order") {
  SourceFunction fn;
  fn.statements = {"a", "b", "c", "d"};
  fn.label_z = {0, 1, 1, 0};
  fn.label_y = 1;
  CHECK(extract_scope(fn) == std::vector<int>{1, 2});

  SourceFunction benign;
  benign.statements = {"a"};
  benign.label_z = {0};
  CHECK(extract_scope(benign).empty());
}

#include "vulnmatch/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "vulnmatch/errors.hpp"
#include "vulnmatch/rng.hpp"
#include "vulnmatch/tokenizer.hpp"

namespace vulnmatch {

namespace {

using nlohmann::json;

int derive_label_y(const std::vector<int>& z) {
  for (int v : z) {
    if (v != 0) return 1;
  }
  return 0;
}

// Binds {placeholder} occurrences to pool identifiers; a placeholder names
// the same identifier everywhere within one function.
struct IdentifierBinder {
  const std::vector<std::string>& pool;
  std::vector<int> order;  // shuffled pool indices, consumed front to back
  size_t next = 0;
  std::vector<std::pair<std::string, std::string>> bound;

  IdentifierBinder(const std::vector<std::string>& pool_, RngStream& rng) : pool(pool_) {
    order.resize(pool.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
  }

  const std::string& lookup(const std::string& placeholder) {
    for (auto& kv : bound) {
      if (kv.first == placeholder) return kv.second;
    }
    const std::string& name = pool[static_cast<size_t>(order[next % order.size()])];
    ++next;
    bound.emplace_back(placeholder, name);
    return bound.back().second;
  }

  std::string instantiate(const std::string& tmpl) {
    std::string out;
    out.reserve(tmpl.size());
    size_t i = 0;
    while (i < tmpl.size()) {
      if (tmpl[i] == '{') {
        size_t close = tmpl.find('}', i);
        bool ident = close != std::string::npos && close > i + 1 &&
                     std::all_of(tmpl.begin() + static_cast<long>(i) + 1,
                                 tmpl.begin() + static_cast<long>(close), [](char c) {
                                   return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
                                 });
        if (ident) {
          out += lookup(tmpl.substr(i + 1, close - i - 1));
          i = close + 1;
          continue;
        }
      }
      out += tmpl[i];
      ++i;
    }
    return out;
  }
};

void validate_spec(const GeneratorSpec& spec) {
  if (spec.num_functions < 10) {
    raise(ErrorKind::Config, "generator: num_functions must be >= 10");
  }
  if (spec.vulnerable_ratio <= 0.0 || spec.vulnerable_ratio >= 1.0) {
    raise(ErrorKind::Config, "generator: vulnerable_ratio must lie in (0,1)");
  }
  if (std::llround(spec.vulnerable_ratio * spec.num_functions) < 1) {
    raise(ErrorKind::Config, "generator: ratio * num_functions must be >= 1");
  }
  if (spec.pattern_families.empty()) {
    raise(ErrorKind::Config, "generator: at least one pattern family required");
  }
  if (spec.identifier_pool.empty()) {
    raise(ErrorKind::Config, "generator: identifier pool is empty");
  }
  if (spec.statements_min < 1 || spec.statements_max < spec.statements_min) {
    raise(ErrorKind::Config, "generator: invalid statements_per_function range");
  }
  size_t largest = 0;
  for (const auto& fam : spec.pattern_families) {
    if (fam.scope_statements.empty()) {
      raise(ErrorKind::Config, "generator: family '" + fam.name + "' has an empty scope");
    }
    if (fam.filler_statements.empty()) {
      raise(ErrorKind::Config, "generator: family '" + fam.name + "' has no fillers");
    }
    largest = std::max(largest, fam.scope_statements.size());
  }
  if (static_cast<size_t>(spec.statements_min) < largest) {
    raise(ErrorKind::Config,
          "generator: statements_per_function range too small to host the largest scope (" +
              std::to_string(largest) + " statements)");
  }
}

}  // namespace

LoadResult load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Io, "cannot open record file: " + path);

  LoadResult result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded() || !rec.is_object()) {
      result.errors.push_back({line_no, "invalid JSON object"});
      continue;
    }
    std::string missing;
    for (const char* key : {"id", "code", "statement_labels"}) {
      if (!rec.contains(key)) missing = key;
    }
    if (!missing.empty()) {
      result.errors.push_back({line_no, "missing field \"" + missing + "\""});
      continue;
    }
    if (!rec["id"].is_string() || !rec["code"].is_string() ||
        !rec["statement_labels"].is_array()) {
      result.errors.push_back({line_no, "field with wrong type"});
      continue;
    }

    SourceFunction fn;
    fn.id = rec["id"].get<std::string>();
    fn.code = rec["code"].get<std::string>();
    try {
      fn.statements = segment_statements(fn.code);
    } catch (const Error& e) {
      result.errors.push_back({line_no, e.what()});
      continue;
    }
    bool bad_labels = false;
    for (const auto& v : rec["statement_labels"]) {
      if (!v.is_number_integer()) {
        bad_labels = true;
        break;
      }
      fn.label_z.push_back(v.get<int>() != 0 ? 1 : 0);
    }
    if (bad_labels) {
      result.errors.push_back({line_no, "statement_labels must hold integers"});
      continue;
    }
    if (fn.label_z.size() != fn.statements.size()) {
      result.errors.push_back(
          {line_no, "statement_labels length " + std::to_string(fn.label_z.size()) +
                        " does not match " + std::to_string(fn.statements.size()) +
                        " segmented statements"});
      continue;
    }
    if (rec.contains("tags") && rec["tags"].is_array()) {
      for (const auto& t : rec["tags"]) {
        if (t.is_string()) fn.tags.push_back(t.get<std::string>());
      }
    }
    fn.label_y = derive_label_y(fn.label_z);
    result.functions.push_back(std::move(fn));
  }
  if (result.functions.empty()) {
    raise(ErrorKind::Data, "no valid records in " + path);
  }
  return result;
}

void write_records(const std::string& path, const std::vector<SourceFunction>& functions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write record file: " + path);
  for (const SourceFunction& fn : functions) {
    json rec;
    rec["id"] = fn.id;
    rec["code"] = fn.code;
    rec["statement_labels"] = fn.label_z;
    if (!fn.tags.empty()) rec["tags"] = fn.tags;
    out << rec.dump() << "\n";
  }
}

std::vector<SourceFunction> synthesize_corpus(const GeneratorSpec& spec) {
  validate_spec(spec);
  RngStream rng = RngStream(spec.seed).fork("corpus");

  int num_vul = static_cast<int>(std::llround(spec.vulnerable_ratio * spec.num_functions));
  std::vector<int> vulnerable(static_cast<size_t>(spec.num_functions), 0);
  std::fill(vulnerable.begin(), vulnerable.begin() + num_vul, 1);
  shuffle(vulnerable, rng);

  std::vector<SourceFunction> corpus;
  corpus.reserve(static_cast<size_t>(spec.num_functions));
  uint64_t range = static_cast<uint64_t>(spec.statements_max - spec.statements_min + 1);
  for (int i = 0; i < spec.num_functions; ++i) {
    SourceFunction fn;
    {
      std::ostringstream oss;
      oss << "fn_" << std::setw(6) << std::setfill('0') << i;
      fn.id = oss.str();
    }
    int total = spec.statements_min + static_cast<int>(rng.next_below(range));
    size_t family_idx = static_cast<size_t>(rng.next_below(spec.pattern_families.size()));
    const PatternTemplate& family = spec.pattern_families[family_idx];
    IdentifierBinder binder(spec.identifier_pool, rng);

    int scope_len = vulnerable[static_cast<size_t>(i)]
                        ? static_cast<int>(family.scope_statements.size())
                        : 0;
    int filler_count = total - scope_len;
    int position = scope_len > 0
                       ? static_cast<int>(rng.next_below(static_cast<uint64_t>(filler_count + 1)))
                       : 0;

    fn.label_z.assign(static_cast<size_t>(total), 0);
    int emitted_fillers = 0;
    int row = 0;
    auto emit_filler = [&]() {
      size_t t = static_cast<size_t>(rng.next_below(family.filler_statements.size()));
      fn.statements.push_back(binder.instantiate(family.filler_statements[t]));
      ++row;
      ++emitted_fillers;
    };
    while (emitted_fillers < position) emit_filler();
    if (scope_len > 0) {
      for (const std::string& tmpl : family.scope_statements) {
        fn.statements.push_back(binder.instantiate(tmpl));
        fn.label_z[static_cast<size_t>(row)] = 1;
        ++row;
      }
      fn.tags.push_back(family.name);
    }
    while (emitted_fillers < filler_count) emit_filler();

    fn.label_y = derive_label_y(fn.label_z);
    std::string code;
    for (size_t s = 0; s < fn.statements.size(); ++s) {
      if (s) code += "\n";
      code += fn.statements[s];
    }
    fn.code = std::move(code);
    corpus.push_back(std::move(fn));
  }
  return corpus;
}

CorpusSplit split_corpus(std::vector<SourceFunction> corpus,
                         const std::array<double, 3>& ratios, uint64_t seed) {
  if (corpus.empty()) raise(ErrorKind::Data, "split: empty corpus");
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    raise(ErrorKind::Config, "split: ratios must sum to 1");
  }
  size_t n = corpus.size();
  auto n_train = static_cast<size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  auto n_val = static_cast<size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    raise(ErrorKind::Data, "split: a partition would be empty for corpus of " +
                               std::to_string(n) + " functions");
  }
  size_t n_test = n - n_train - n_val;

  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng = RngStream(seed).fork("split");
  shuffle(perm, rng);

  CorpusSplit split;
  split.train.reserve(n_train);
  split.validation.reserve(n_val);
  split.test.reserve(n_test);
  for (size_t i = 0; i < n; ++i) {
    SourceFunction& fn = corpus[perm[i]];
    if (i < n_train) {
      split.train.push_back(std::move(fn));
    } else if (i < n_train + n_val) {
      split.validation.push_back(std::move(fn));
    } else {
      split.test.push_back(std::move(fn));
    }
  }
  return split;
}

std::vector<int> extract_scope(const SourceFunction& func) {
  std::vector<int> indices;
  for (size_t j = 0; j < func.label_z.size(); ++j) {
    if (func.label_z[j] != 0) indices.push_back(static_cast<int>(j));
  }
  return indices;
}

std::vector<PatternTemplate> default_pattern_families() {
  // Shared benign fillers; scope rows keep distinctive call/operator shapes
  // so statement labels stay separable from filler statements.
  const std::vector<std::string> fillers = {
      "int {a} = 0;",
      "int {b} = {a} + 2;",
      "{a} = {a} + {b};",
      "{b} = {a} * 3;",
      "int {c} = {b} / 4;",
      "{c} = {a} - {b};",
      "if ({a} > {b}) {",
      "}",
      "for (int {k} = 0; {k} < 8; {k}++) {",
      "{sum} += {a};",
      "{a}--;",
      "printf(\"%d\\n\", {a});",
      "return {a};",
  };

  std::vector<PatternTemplate> families;
  families.push_back({"oob_write",
                      {"for (int {i} = 0; {i} <= {len}; {i}++) {",
                       "{buf}[{off} + {i}] = {src}[{i}];"},
                      fillers});
  families.push_back({"unchecked_copy",
                      {"char *{p} = (char *)malloc({n});",
                       "memcpy({p}, {src}, {n} + 1);"},
                      fillers});
  families.push_back({"use_after_free",
                      {"free({p});",
                       "{p}->{f} = {v};"},
                      fillers});
  families.push_back({"format_string",
                      {"char {buf}[64];",
                       "snprintf({buf}, 128, {fmt});",
                       "syslog(LOG_INFO, {buf});"},
                      fillers});
  families.push_back({"int_overflow_alloc",
                      {"unsigned short {n} = {cnt} * {sz};",
                       "int *{arr} = (int *)malloc({n});",
                       "{arr}[{cnt} - 1] = {v};",
                       "{arr}[{sz} - 1] = 0;"},
                      fillers});
  return families;
}

std::vector<std::string> default_identifier_pool() {
  return {"idx",     "count",   "size",  "buffer", "data", "ptr",  "input",
          "output",  "tmp",     "value", "total",  "limit", "pos",  "offset",
          "src_len", "dst_len", "acc",   "node",   "item",  "flag", "step",
          "width",   "depth",   "key"};
}

}  // namespace vulnmatch

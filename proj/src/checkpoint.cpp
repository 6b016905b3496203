#include "vulnmatch/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vulnmatch {

namespace {

constexpr char kMagic[8] = {'V', 'M', 'C', 'K', 'P', 'T', '0', '\n'};

void put_u32(std::ostream& out, uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.write(buf, 4);
}

void put_i64(std::ostream& out, int64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

void put_f64(std::ostream& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  char buf[4];
  if (!in.read(buf, 4)) raise(ErrorKind::Data, "checkpoint truncated: " + path);
  uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

int64_t get_i64(std::istream& in, const std::string& path) {
  char buf[8];
  if (!in.read(buf, 8)) raise(ErrorKind::Data, "checkpoint truncated: " + path);
  int64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

double get_f64(std::istream& in, const std::string& path) {
  char buf[8];
  if (!in.read(buf, 8)) raise(ErrorKind::Data, "checkpoint truncated: " + path);
  double v;
  std::memcpy(&v, buf, 8);
  return v;
}

std::string get_string(std::istream& in, const std::string& path) {
  uint32_t len = get_u32(in, path);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) {
    raise(ErrorKind::Data, "checkpoint truncated: " + path);
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, Checkpoint::kVersion);
  put_string(out, ckpt.phase);
  put_string(out, ckpt.config_json);
  put_f64(out, ckpt.best_val_statement_f1);
  put_i64(out, ckpt.best_epoch);
  put_u32(out, ckpt.has_codebook ? 1 : 0);
  put_u32(out, static_cast<uint32_t>(ckpt.records.size()));
  for (const ParamRecord& rec : ckpt.records) {
    put_string(out, rec.name);
    put_i64(out, rec.rows);
    put_i64(out, rec.cols);
    out.write(reinterpret_cast<const char*>(rec.data.data()),
              static_cast<std::streamsize>(rec.data.size() * sizeof(double)));
  }
  if (!out) raise(ErrorKind::Io, "failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    raise(ErrorKind::Data, "not a checkpoint file: " + path);
  }
  uint32_t version = get_u32(in, path);
  if (version != Checkpoint::kVersion) {
    raise(ErrorKind::Data, "checkpoint version " + std::to_string(version) +
                               " unsupported (expected " +
                               std::to_string(Checkpoint::kVersion) + "): " + path);
  }
  Checkpoint ckpt;
  ckpt.phase = get_string(in, path);
  ckpt.config_json = get_string(in, path);
  ckpt.best_val_statement_f1 = get_f64(in, path);
  ckpt.best_epoch = static_cast<int>(get_i64(in, path));
  ckpt.has_codebook = get_u32(in, path) != 0;
  uint32_t count = get_u32(in, path);
  ckpt.records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    ParamRecord rec;
    rec.name = get_string(in, path);
    rec.rows = get_i64(in, path);
    rec.cols = get_i64(in, path);
    if (rec.rows < 0 || rec.cols < 0) {
      raise(ErrorKind::Data, "checkpoint record '" + rec.name + "' has negative shape");
    }
    size_t n = static_cast<size_t>(rec.rows) * static_cast<size_t>(rec.cols);
    rec.data.resize(n);
    if (n > 0 && !in.read(reinterpret_cast<char*>(rec.data.data()),
                          static_cast<std::streamsize>(n * sizeof(double)))) {
      raise(ErrorKind::Data, "checkpoint truncated in record '" + rec.name + "': " + path);
    }
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

}  // namespace vulnmatch

#include "emo/formats.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace emo::io {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

class BinReader {
 public:
  explicit BinReader(const fs::path& path) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw FormatError("cannot open " + path_, 0);
  }
  void expect_magic(const char* magic) {
    char buf[4];
    read_raw(buf, 4);
    if (std::memcmp(buf, magic, 4) != 0)
      throw FormatError("bad magic in " + path_ + ", expected " + magic, 0);
  }
  uint32_t read_u32() {
    unsigned char b[4];
    read_raw(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  uint64_t read_u64() {
    uint64_t lo = read_u32();
    uint64_t hi = read_u32();
    return lo | (hi << 32);
  }
  double read_f64() {
    uint64_t bits = read_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void read_f64_block(double* dst, size_t count) {
    for (size_t i = 0; i < count; ++i) dst[i] = read_f64();
  }
  std::string read_string() {
    uint32_t len = read_u32();
    std::string s(len, '\0');
    if (len) read_raw(s.data(), len);
    return s;
  }
  size_t offset() const { return offset_; }

 private:
  void read_raw(char* dst, size_t count) {
    in_.read(dst, static_cast<std::streamsize>(count));
    if (static_cast<size_t>(in_.gcount()) != count)
      throw FormatError("truncated file " + path_, offset_);
    offset_ += count;
  }
  std::ifstream in_;
  std::string path_;
  size_t offset_ = 0;
};

class BinWriter {
 public:
  explicit BinWriter(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot write " + path.string(), 0);
  }
  void magic(const char* m) { out_.write(m, 4); }
  void u32(uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out_.write(reinterpret_cast<char*>(b), 4);
  }
  void u64(uint64_t v) {
    u32(static_cast<uint32_t>(v));
    u32(static_cast<uint32_t>(v >> 32));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream out_;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, size_t offset_hint) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw FormatError("expected a number, got '" + s + "'", offset_hint);
  return v;
}

}  // namespace

void write_latent_csv(const fs::path& path, const latent::LatentSet& z) {
  std::ostringstream os;
  for (int j = 0; j < z.d; ++j) os << (j ? "," : "") << "dim_" << j;
  os << "\n";
  for (int i = 0; i < z.n; ++i) {
    for (int j = 0; j < z.d; ++j) os << (j ? "," : "") << format_double(z.at(i, j));
    os << "\n";
  }
  write_text_file(path, os.str());
}

latent::LatentSet read_latent_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::string line;
  size_t offset = 0;
  if (!std::getline(in, line)) throw FormatError("empty latent CSV " + path.string(), 0);
  offset += line.size() + 1;
  auto header = split_csv_line(line);
  int d = static_cast<int>(header.size());
  for (int j = 0; j < d; ++j)
    if (header[static_cast<size_t>(j)] != "dim_" + std::to_string(j))
      throw FormatError("bad latent CSV header column '" + header[static_cast<size_t>(j)] + "'", 0);
  latent::LatentSet z;
  z.d = d;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != d)
      throw FormatError("latent CSV row has wrong arity", offset);
    for (const std::string& c : cells) z.data.push_back(parse_double(c, offset));
    offset += line.size() + 1;
    ++z.n;
  }
  z.validate();
  return z;
}

void write_latent_bin(const fs::path& path, const latent::LatentSet& z) {
  BinWriter w(path);
  w.magic("EMLZ");
  w.u32(static_cast<uint32_t>(z.n));
  w.u32(static_cast<uint32_t>(z.d));
  for (double v : z.data) w.f64(v);
}

latent::LatentSet read_latent_bin(const fs::path& path) {
  BinReader r(path);
  r.expect_magic("EMLZ");
  latent::LatentSet z;
  z.n = static_cast<int>(r.read_u32());
  z.d = static_cast<int>(r.read_u32());
  if (z.n < 1 || z.d < 1 || static_cast<uint64_t>(z.n) * z.d > (1ull << 28))
    throw FormatError("implausible latent dump dimensions", r.offset());
  z.data.resize(static_cast<size_t>(z.n) * z.d);
  r.read_f64_block(z.data.data(), z.data.size());
  z.validate();
  return z;
}

latent::LatentSet read_latent_auto(const fs::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError("cannot open " + path.string(), 0);
  char head[4] = {0, 0, 0, 0};
  probe.read(head, 4);
  probe.close();
  if (std::memcmp(head, "EMLZ", 4) == 0) return read_latent_bin(path);
  return read_latent_csv(path);
}

void write_spectrum_csv(const fs::path& path, const std::vector<double>& eigenvalues,
                        const latent::SpectrumSummary& summary) {
  std::ostringstream os;
  os << "i,lambda,ev,cumulative\n";
  for (size_t i = 0; i < summary.ev.size(); ++i)
    os << (i + 1) << "," << format_double(eigenvalues[i]) << "," << format_double(summary.ev[i])
       << "," << format_double(summary.cumulative[i]) << "\n";
  write_text_file(path, os.str());
}

void write_spectrum_json(const fs::path& path, const latent::SpectrumSummary& summary) {
  std::ostringstream os;
  os << "{\"auc_z\":" << format_double(summary.auc_z)
     << ",\"components_to_threshold\":{\"0.9\":" << latent::components_to_threshold(summary, 0.9)
     << ",\"0.95\":" << latent::components_to_threshold(summary, 0.95)
     << ",\"0.99\":" << latent::components_to_threshold(summary, 0.99) << "}}\n";
  write_text_file(path, os.str());
}

void write_pose_csv(const fs::path& path, const rot6d::PoseSequence& seq) {
  std::ostringstream os;
  os << "r1,r2,r3,r4,r5,r6,tx,ty,tz\n";
  for (const auto& f : seq.frames) {
    for (int i = 0; i < 9; ++i) os << (i ? "," : "") << format_double(f[static_cast<size_t>(i)]);
    os << "\n";
  }
  write_text_file(path, os.str());
}

rot6d::PoseSequence read_pose_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty pose CSV", 0);
  if (split_csv_line(line) != std::vector<std::string>{"r1", "r2", "r3", "r4", "r5", "r6", "tx", "ty", "tz"})
    throw FormatError("bad pose CSV header", 0);
  rot6d::PoseSequence seq;
  size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 9) throw FormatError("pose CSV row has wrong arity", offset);
    std::array<double, 9> f{};
    for (int i = 0; i < 9; ++i) f[static_cast<size_t>(i)] = parse_double(cells[static_cast<size_t>(i)], offset);
    seq.frames.push_back(f);
    offset += line.size() + 1;
  }
  return seq;
}

void write_frames_bin(const fs::path& path, const std::vector<world::ToyFace>& faces) {
  if (faces.empty()) throw DomainError("write_frames_bin: no frames");
  BinWriter w(path);
  w.magic("EMFR");
  w.u32(static_cast<uint32_t>(faces.size()));
  w.u32(static_cast<uint32_t>(faces[0].h));
  w.u32(static_cast<uint32_t>(faces[0].w));
  for (const auto& f : faces)
    for (double v : f.image) w.f64(v);
}

std::vector<std::vector<double>> read_frames_bin(const fs::path& path, int& h, int& w) {
  BinReader r(path);
  r.expect_magic("EMFR");
  uint32_t t = r.read_u32();
  h = static_cast<int>(r.read_u32());
  w = static_cast<int>(r.read_u32());
  if (t == 0 || h <= 0 || w <= 0 || static_cast<uint64_t>(t) * h * w > (1ull << 28))
    throw FormatError("implausible frame dimensions", r.offset());
  std::vector<std::vector<double>> frames(t);
  for (auto& f : frames) {
    f.resize(static_cast<size_t>(h) * w);
    r.read_f64_block(f.data(), f.size());
  }
  return frames;
}

void write_landmarks_csv(const fs::path& path, const std::vector<world::ToyFace>& faces) {
  std::ostringstream os;
  os << "frame";
  for (int l = 0; l < world::kNumLandmarks; ++l) os << ",x" << l << ",y" << l;
  os << "\n";
  for (size_t t = 0; t < faces.size(); ++t) {
    os << t;
    for (const auto& lm : faces[t].landmarks)
      os << "," << format_double(lm[0]) << "," << format_double(lm[1]);
    os << "\n";
  }
  write_text_file(path, os.str());
}

void write_factors_csv(const fs::path& path, const std::vector<world::FactorVector>& factors) {
  std::ostringstream os;
  os << "frame,a0,a1,a2,a3,em0,em1,em2,eu0,eu1,eu2,tx,ty,tz\n";
  for (size_t t = 0; t < factors.size(); ++t) {
    os << t;
    for (double v : factors[t].phi()) os << "," << format_double(v);
    for (double v : factors[t].pose.translation) os << "," << format_double(v);
    os << "\n";
  }
  write_text_file(path, os.str());
}

void write_checkpoint(const fs::path& path, const numgrad::ParamVector& params) {
  BinWriter w(path);
  w.magic("EMCK");
  w.u32(1);  // format version
  w.u32(static_cast<uint32_t>(params.segments().size()));
  for (const auto& s : params.segments()) {
    w.str(s.name);
    w.u64(s.offset);
    w.u64(s.length);
  }
  for (double v : params.values()) w.f64(v);
}

numgrad::ParamVector read_checkpoint(const fs::path& path) {
  BinReader r(path);
  r.expect_magic("EMCK");
  uint32_t version = r.read_u32();
  if (version != 1) throw FormatError("unsupported checkpoint version", r.offset());
  uint32_t nseg = r.read_u32();
  numgrad::ParamVector params;
  for (uint32_t i = 0; i < nseg; ++i) {
    std::string name = r.read_string();
    uint64_t offset = r.read_u64();
    uint64_t length = r.read_u64();
    if (offset != params.size()) throw FormatError("non-contiguous checkpoint segments", r.offset());
    params.add_segment(name, length);
  }
  r.read_f64_block(params.values().data(), params.size());
  return params;
}

void write_mouth_basis(const fs::path& path, const latent::MouthBasis& basis) {
  BinWriter w(path);
  w.magic("EMMB");
  w.u32(static_cast<uint32_t>(basis.d));
  w.u32(static_cast<uint32_t>(basis.k));
  for (double v : basis.mean) w.f64(v);
  for (double v : basis.components) w.f64(v);
  w.u32(static_cast<uint32_t>(basis.source_spectrum.ev.size()));
  for (double v : basis.source_spectrum.ev) w.f64(v);
}

latent::MouthBasis read_mouth_basis(const fs::path& path) {
  BinReader r(path);
  r.expect_magic("EMMB");
  latent::MouthBasis b;
  b.d = static_cast<int>(r.read_u32());
  b.k = static_cast<int>(r.read_u32());
  if (b.d < 1 || b.k < 1 || b.k > b.d || b.d > (1 << 16))
    throw FormatError("implausible mouth basis dimensions", r.offset());
  b.mean.resize(static_cast<size_t>(b.d));
  r.read_f64_block(b.mean.data(), b.mean.size());
  b.components.resize(static_cast<size_t>(b.d) * b.k);
  r.read_f64_block(b.components.data(), b.components.size());
  uint32_t ev_len = r.read_u32();
  b.source_spectrum.ev.resize(ev_len);
  r.read_f64_block(b.source_spectrum.ev.data(), ev_len);
  double acc = 0.0;
  for (double v : b.source_spectrum.ev) {
    acc += v;
    b.source_spectrum.cumulative.push_back(acc);
  }
  if (ev_len) b.source_spectrum.auc_z = latent::auc_z(b.source_spectrum);
  return b;
}

void write_history_csv(const fs::path& path, const std::vector<std::string>& columns,
                       const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  for (size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row[i]);
    os << "\n";
  }
  write_text_file(path, os.str());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

uint64_t fnv1a_hash(const std::string& data) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace emo::io

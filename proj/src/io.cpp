#include "fedface/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <set>

namespace fedface {
namespace {

class Writer {
 public:
  explicit Writer(std::string_view magic) { bytes_.assign(magic.begin(), magic.end()); }

  void u8(std::uint8_t v) { bytes_.push_back(v); }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f64s(std::span<const double> xs) {
    for (double x : xs) u64(std::bit_cast<std::uint64_t>(x));
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string_view magic, const char* what)
      : bytes_(bytes), what_(what) {
    need(magic.size());
    if (!std::equal(magic.begin(), magic.end(), bytes_.begin())) fail("bad magic");
    pos_ = magic.size();
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  // Reads a count that must be followed by at least count * unit bytes.
  std::size_t count(std::size_t unit) {
    const std::uint64_t n = u64();
    if (unit > 0 && n > remaining() / unit) fail("count exceeds file size");
    return static_cast<std::size_t>(n);
  }

  std::uint32_t u32_value(const char* field) {
    const std::uint64_t v = u64();
    if (v > std::numeric_limits<std::uint32_t>::max()) fail(std::string(field) + " out of range");
    return static_cast<std::uint32_t>(v);
  }

  Vector f64s(std::size_t n) {
    if (n > remaining() / 8) fail("truncated");
    Vector v(n);
    for (auto& x : v) {
      x = std::bit_cast<double>(u64());
      if (!std::isfinite(x)) fail("non-finite value");
    }
    return v;
  }

  void finish() const {
    if (remaining() != 0) fail("trailing bytes");
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw IoError(std::string(what_) + ": " + why);
  }

 private:
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) fail("truncated");
  }

  std::span<const std::uint8_t> bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_datasets(const std::vector<ClientDataset>& datasets) {
  if (datasets.empty()) throw IoError("dataset file: no identities");
  const std::size_t dim = datasets.front().samples.empty()
                              ? 0
                              : datasets.front().samples.front().features.size();
  Writer w("FSD1");
  w.u64(datasets.size());
  w.u64(dim);
  for (const auto& ds : datasets) {
    ds.validate();
    w.u64(ds.identity);
    w.u64(ds.size());
    for (const auto& s : ds.samples) {
      if (s.features.size() != dim) throw ShapeError("dataset file: mixed input dimensions");
      w.f64s(s.features);
    }
  }
  return w.take();
}

std::vector<ClientDataset> decode_datasets(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "FSD1", "dataset file");
  const std::size_t c = r.count(16);
  const std::size_t dim = r.u64();
  if (c == 0 || dim == 0) r.fail("empty dataset");
  std::vector<ClientDataset> out(c);
  std::set<std::uint32_t> seen;
  for (auto& ds : out) {
    ds.identity = r.u32_value("identity");
    if (!seen.insert(ds.identity).second) r.fail("duplicate identity");
    const std::size_t n = r.count(dim * 8);
    if (n == 0) r.fail("identity without samples");
    ds.samples.resize(n);
    for (auto& s : ds.samples) {
      s.identity = ds.identity;
      s.features = r.f64s(dim);
    }
  }
  r.finish();
  return out;
}

std::vector<std::uint8_t> encode_model(const Model& model) {
  const auto& dims = model.net.layout().dims();
  const Matrix& w = model.class_embeddings;
  if (w.rows() != model.class_ids.size()) throw ShapeError("model: class id count != rows of W");
  Writer out("FSM1");
  out.u64(dims.size());
  for (auto d : dims) out.u64(d);
  out.u64(model.net.params().size());
  out.f64s(model.net.params());
  out.u64(w.rows());
  out.u64(w.cols());
  out.f64s(w.data());
  for (auto id : model.class_ids) out.u64(id);
  return out.take();
}

Model decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "FSM1", "model file");
  const std::size_t ndims = r.count(8);
  if (ndims < 2) r.fail("layout needs at least two dims");
  std::vector<std::size_t> dims(ndims);
  for (auto& d : dims) {
    d = r.u64();
    if (d == 0 || d > (std::size_t{1} << 24)) r.fail("layer dimension out of range");
  }
  Layout layout(dims);
  const std::size_t p = r.count(8);
  if (p != layout.param_count()) r.fail("parameter count does not match the layout");
  Model m;
  m.net = EmbeddingNet(layout, r.f64s(p));
  const std::size_t c = r.u64();
  const std::size_t d = r.u64();
  if (c > 0 && d != layout.output_dim()) r.fail("class embedding dim does not match the layout");
  if (d > 0 && c > std::numeric_limits<std::size_t>::max() / 8 / d) r.fail("class count too large");
  const Vector flat = r.f64s(c * d);
  m.class_embeddings = Matrix(c, d);
  std::copy(flat.begin(), flat.end(), m.class_embeddings.data().begin());
  std::set<std::uint32_t> seen;
  for (std::size_t k = 0; k < c; ++k) {
    m.class_ids.push_back(r.u32_value("class id"));
    if (!seen.insert(m.class_ids.back()).second) r.fail("duplicate class id");
  }
  r.finish();
  return m;
}

std::vector<std::uint8_t> encode_pairs(const PairProtocol& pairs) {
  if (pairs.pairs.empty()) throw IoError("pairs file: no pairs");
  const std::size_t dim = pairs.pairs.front().a.size();
  Writer w("FSP1");
  w.u64(dim);
  w.u64(pairs.pairs.size());
  for (const auto& p : pairs.pairs) {
    if (p.a.size() != dim || p.b.size() != dim) throw ShapeError("pairs file: mixed dimensions");
    w.u64(p.identity_a);
    w.u64(p.identity_b);
    w.u8(p.same_identity ? 1 : 0);
    w.f64s(p.a);
    w.f64s(p.b);
  }
  return w.take();
}

PairProtocol decode_pairs(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "FSP1", "pairs file");
  const std::size_t dim = r.u64();
  if (dim == 0 || dim > (std::size_t{1} << 24)) r.fail("input dimension out of range");
  const std::size_t n = r.count(17 + 16 * dim);
  PairProtocol out;
  out.pairs.resize(n);
  for (auto& p : out.pairs) {
    p.identity_a = r.u32_value("identity");
    p.identity_b = r.u32_value("identity");
    const std::uint8_t same = r.u8();
    if (same > 1) r.fail("bad same_identity flag");
    p.same_identity = same == 1;
    if (p.same_identity != (p.identity_a == p.identity_b)) r.fail("pair label contradicts identities");
    p.a = r.f64s(dim);
    p.b = r.f64s(dim);
  }
  r.finish();
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path);
  return bytes;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path);
}

void write_datasets(const std::string& path, const std::vector<ClientDataset>& datasets) {
  write_file(path, encode_datasets(datasets));
}

std::vector<ClientDataset> read_datasets(const std::string& path) {
  return decode_datasets(read_file(path));
}

void write_model(const std::string& path, const Model& model) {
  write_file(path, encode_model(model));
}

Model read_model(const std::string& path) { return decode_model(read_file(path)); }

void write_pairs(const std::string& path, const PairProtocol& pairs) {
  write_file(path, encode_pairs(pairs));
}

PairProtocol read_pairs(const std::string& path) { return decode_pairs(read_file(path)); }

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void MetricsRecord::key(std::string_view k) {
  if (k.empty() || k.find_first_of(" =\n") != std::string_view::npos) {
    throw ConfigError("metrics key '" + std::string(k) + "' is not a bare word");
  }
  if (!line_.empty()) line_ += ' ';
  line_ += k;
  line_ += '=';
}

MetricsRecord& MetricsRecord::add(std::string_view k, double value) {
  key(k);
  line_ += format_double(value);
  return *this;
}

MetricsRecord& MetricsRecord::add(std::string_view k, std::uint64_t value) {
  key(k);
  line_ += std::to_string(value);
  return *this;
}

MetricsRecord& MetricsRecord::add(std::string_view k, std::string_view value) {
  if (value.empty() || value.find_first_of(" \n") != std::string_view::npos) {
    throw ConfigError("metrics value for '" + std::string(k) + "' is not a bare word");
  }
  key(k);
  line_ += value;
  return *this;
}

MetricsWriter::MetricsWriter(std::string path) : path_(std::move(path)) {}

void MetricsWriter::write(const MetricsRecord& record) {
  if (path_.empty()) return;
  if (path_ == "-") {
    std::cout << record.line() << std::endl;
    return;
  }
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to " + path_);
  out << record.line() << '\n';
  if (!out) throw IoError("cannot write " + path_);
}

}  // namespace fedface

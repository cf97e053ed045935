#include "htrlab/io/bundle.hpp"

#include <cstring>
#include <fstream>

#include "htrlab/error.hpp"

namespace htrlab::io {

namespace {

constexpr char kMagic[8] = {'H', 'T', 'R', 'L', 'A', 'B', '\0', '\1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void u64(std::uint64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void i64(std::int64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string where) : is_(is), where_(std::move(where)) {}
  template <class T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is_) fail(ErrorCode::FormatError, where_ + ": truncated file");
    return v;
  }
  std::uint64_t count(std::uint64_t limit) {
    const auto n = pod<std::uint64_t>();
    if (n > limit) fail(ErrorCode::FormatError, where_ + ": implausible length " + std::to_string(n));
    return n;
  }
  std::string str() {
    std::string s(count(1u << 24), '\0');
    is_.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!is_) fail(ErrorCode::FormatError, where_ + ": truncated string");
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(count(1ull << 32));
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is_) fail(ErrorCode::FormatError, where_ + ": truncated array");
    return v;
  }

 private:
  std::istream& is_;
  std::string where_;
};

}  // namespace

void Bundle::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta)
    if (k == key) {
      v = value;
      return;
    }
  meta.emplace_back(key, value);
}

const std::string& Bundle::get(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  fail(ErrorCode::FormatError, "bundle '" + kind + "' has no entry '" + key + "'");
}

bool Bundle::has(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return true;
  return false;
}

void Bundle::add(const std::string& name, const ad::Tensor& t) {
  add(name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

void Bundle::add(const std::string& name, ad::Shape shape, std::vector<double> values) {
  arrays.push_back({name, std::move(shape), std::move(values)});
}

const Array& Bundle::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  fail(ErrorCode::FormatError, "bundle '" + kind + "' has no array '" + name + "'");
}

bool Bundle::has_array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

ad::Tensor Bundle::tensor(const std::string& name) const {
  const auto& a = array(name);
  return ad::Tensor::from(a.shape, a.values);
}

void write_bundle(const std::filesystem::path& path, const Bundle& b) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::IOError, "cannot write " + path.string());
  Writer w(os);
  os.write(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.str(b.kind);
  w.u64(b.meta.size());
  for (const auto& [k, v] : b.meta) {
    w.str(k);
    w.str(v);
  }
  w.u64(b.arrays.size());
  for (const auto& a : b.arrays) {
    w.str(a.name);
    w.u64(a.shape.size());
    for (auto d : a.shape) w.i64(d);
    w.doubles(a.values);
  }
  require(static_cast<bool>(os), ErrorCode::IOError, "write failed for " + path.string());
}

Bundle read_bundle(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IOError, "cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  require(is && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorCode::FormatError,
          path.string() + " is not an htrlab bundle");
  Reader r(is, path.string());
  const auto version = r.pod<std::uint32_t>();
  require(version == kVersion, ErrorCode::FormatError,
          path.string() + ": unsupported bundle version " + std::to_string(version));
  Bundle b;
  b.kind = r.str();
  require(expected_kind.empty() || b.kind == expected_kind, ErrorCode::FormatError,
          path.string() + " holds a '" + b.kind + "', expected '" + expected_kind + "'");
  const auto nmeta = r.count(1u << 20);
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    auto k = r.str();
    auto v = r.str();
    b.meta.emplace_back(std::move(k), std::move(v));
  }
  const auto narr = r.count(1u << 20);
  for (std::uint64_t i = 0; i < narr; ++i) {
    Array a;
    a.name = r.str();
    const auto rank = r.count(16);
    for (std::uint64_t d = 0; d < rank; ++d) a.shape.push_back(r.pod<std::int64_t>());
    a.values = r.doubles();
    require(ad::numel(a.shape) == static_cast<std::int64_t>(a.values.size()), ErrorCode::FormatError,
            path.string() + ": array '" + a.name + "' size does not match its shape");
    b.arrays.push_back(std::move(a));
  }
  return b;
}

std::uint64_t checksum(const std::vector<ad::Tensor>& ts) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : ts) {
    for (double v : t.data()) {
      unsigned char bytes[sizeof v];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace htrlab::io

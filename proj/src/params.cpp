#include "pgnet/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "pgnet/errors.hpp"

namespace pgnet {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'N', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(d));
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw StateError("checkpoint: truncated file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw StateError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

int ParamStore::declare(const std::string& name, int rows, int cols) {
  if (by_name_.count(name))
    throw std::logic_error("parameter declared twice: " + name);
  int idx = count();
  names_.push_back(name);
  tensors_.emplace_back(rows, cols);
  by_name_.emplace(name, idx);
  return idx;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::logic_error("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const Mat& t : tensors_) total += t.size();
  return total;
}

void ParamStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(count()));
  for (int i = 0; i < count(); ++i) {
    const std::string& nm = names_[i];
    const Mat& t = tensors_[i];
    write_u32(os, static_cast<std::uint32_t>(nm.size()));
    os.write(nm.data(), static_cast<std::streamsize>(nm.size()));
    write_u32(os, 2);
    write_u64(os, static_cast<std::uint64_t>(t.rows()));
    write_u64(os, static_cast<std::uint64_t>(t.cols()));
    for (std::size_t k = 0; k < t.size(); ++k) write_f64(os, t[k]);
  }
  if (!os) throw InputError("checkpoint: write failed: " + path);
}

void ParamStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw StateError("checkpoint: bad magic in " + path);
  std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw StateError("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t n = read_u32(is);
  if (n != static_cast<std::uint32_t>(count()))
    throw StateError("checkpoint: holds " + std::to_string(n) + " parameters, model has " +
                     std::to_string(count()));
  std::vector<bool> seen(count(), false);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t name_len = read_u32(is);
    std::string nm(name_len, '\0');
    is.read(nm.data(), name_len);
    if (!is) throw StateError("checkpoint: truncated file");
    auto it = by_name_.find(nm);
    if (it == by_name_.end())
      throw StateError("checkpoint: unknown parameter \"" + nm + "\"");
    std::uint32_t rank = read_u32(is);
    if (rank != 2)
      throw StateError("checkpoint: parameter \"" + nm + "\" has rank " + std::to_string(rank));
    std::uint64_t rows = read_u64(is);
    std::uint64_t cols = read_u64(is);
    Mat& t = tensors_[it->second];
    if (rows != std::uint64_t(t.rows()) || cols != std::uint64_t(t.cols()))
      throw StateError("checkpoint: parameter \"" + nm + "\" has shape " + std::to_string(rows) +
                       "x" + std::to_string(cols) + ", model expects " + t.shape_str());
    if (seen[it->second])
      throw StateError("checkpoint: parameter \"" + nm + "\" appears twice");
    seen[it->second] = true;
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = read_f64(is);
  }
}

Value Binder::operator[](int param_index) {
  auto it = bound_.find(param_index);
  if (it != bound_.end()) return it->second;
  Value v = tape_->leaf(store_->tensor(param_index));
  bound_.emplace(param_index, v);
  return v;
}

void Binder::accumulate_gradients(double scale, std::vector<Mat>& accum) const {
  for (const auto& [idx, val] : bound_) {
    Mat g = tape_->grad(val);
    Mat& dst = accum[idx];
    if (dst.empty()) dst = Mat(g.rows(), g.cols());
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += scale * g[k];
  }
}

std::vector<Mat> make_gradient_buffer(const ParamStore& store) {
  std::vector<Mat> buf;
  buf.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) {
    const Mat& t = store.tensor(i);
    buf.emplace_back(t.rows(), t.cols());
  }
  return buf;
}

}  // namespace pgnet

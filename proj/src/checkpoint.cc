#include "cif/checkpoint.h"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cif {
namespace {

constexpr std::array<char, 8> kMagic = {'C', 'I', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::array<char, 4> kEndMark = {'E', 'N', 'D', '\0'};

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  void need(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw CheckpointError("truncated checkpoint " + path_ + " at byte " + std::to_string(pos_));
    }
  }
  const char* bytes(std::size_t n) {
    need(n);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes(4));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes(8));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    const char* p = bytes(n);
    return std::string(p, n);
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<char> data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::string* Checkpoint::header_value(const std::string& key) const {
  for (const auto& [k, v] : header)
    if (k == key) return &v;
  return nullptr;
}

const NamedTensor* Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(checkpoint.header.size()));
  for (const auto& [k, v] : checkpoint.header) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& t : checkpoint.tensors) {
    w.str(t.name);
    const auto& shape = t.tensor.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u64(d);
    for (double v : t.tensor.values()) w.f64(v);
  }
  w.bytes(kEndMark.data(), kEndMark.size());

  // Write to a sibling file first so an interrupted save never leaves a
  // half-written checkpoint under the final name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("cannot rename " + tmp + " to " + path);
  }
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path);

  if (std::memcmp(r.bytes(kMagic.size()), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointError(path + " is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " in " + path);
  }
  Checkpoint ck;
  const std::uint32_t n_header = r.u32();
  for (std::uint32_t i = 0; i < n_header; ++i) {
    std::string key = r.str();
    std::string value = r.str();
    ck.header.emplace_back(std::move(key), std::move(value));
  }
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      count *= d;
    }
    if (count > r.remaining() / 8) {
      throw CheckpointError("truncated checkpoint " + path + " in tensor " + name);
    }
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64();
    ck.tensors.push_back({std::move(name), Tensor::constant(std::move(shape), std::move(values))});
  }
  if (std::memcmp(r.bytes(kEndMark.size()), kEndMark.data(), kEndMark.size()) != 0 ||
      !r.at_end()) {
    throw CheckpointError("corrupt checkpoint trailer in " + path);
  }
  return ck;
}

}  // namespace cif

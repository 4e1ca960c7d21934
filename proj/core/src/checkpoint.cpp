#include "g2n/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "g2n/error.hpp"

namespace g2n {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  const size_t at = buf.size();
  buf.resize(at + 4);
  std::memcpy(buf.data() + at, &v, 4);
}

void put_f32(std::vector<uint8_t>& buf, const float* data, size_t count) {
  const size_t at = buf.size();
  buf.resize(at + 4 * count);
  std::memcpy(buf.data() + at, data, 4 * count);
}

class Cursor {
 public:
  Cursor(const uint8_t* data, size_t size) : data_(data), size_(size) {}

  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, data_ + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str(size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }
  void f32(float* out, size_t count) {
    need(4 * count);
    std::memcpy(out, data_ + pos_, 4 * count);
    pos_ += 4 * count;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) {
    G2N_CHECK(pos_ + n <= size_, "checkpoint: truncated file (needed ", n,
              " bytes at offset ", pos_, ", file has ", size_, ")");
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path,
                      const std::vector<TensorBlob>& entries) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), {'R', 'F', 'R', 'I'});
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, uint32_t(entries.size()));
  for (const auto& e : entries) {
    G2N_CHECK(int64_t(e.data.size()) == e.shape.numel(),
              "checkpoint: entry '", e.name, "' data length ", e.data.size(),
              " does not match shape ", e.shape.str());
    put_u32(buf, uint32_t(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    put_u32(buf, uint32_t(e.shape.rank()));
    for (int i = 0; i < e.shape.rank(); ++i)
      put_u32(buf, uint32_t(e.shape.dim(i)));
    put_f32(buf, e.data.data(), e.data.size());
  }
  const uint32_t crc =
      uint32_t(::crc32(0, buf.data(), uInt(buf.size())));
  put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  G2N_CHECK(out.good(), "checkpoint: cannot open '", path, "' for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size()));
  G2N_CHECK(out.good(), "checkpoint: write to '", path, "' failed");
}

std::vector<TensorBlob> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  G2N_CHECK(in.good(), "checkpoint: cannot open '", path, "'");
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> buf(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  G2N_CHECK(in.good(), "checkpoint: read from '", path, "' failed");

  G2N_CHECK(buf.size() >= 16, "checkpoint: file too short (", buf.size(),
            " bytes)");
  const uint32_t stored_crc_end =
      uint32_t(buf[buf.size() - 4]) | uint32_t(buf[buf.size() - 3]) << 8 |
      uint32_t(buf[buf.size() - 2]) << 16 | uint32_t(buf[buf.size() - 1]) << 24;
  const uint32_t actual_crc =
      uint32_t(::crc32(0, buf.data(), uInt(buf.size() - 4)));
  G2N_CHECK(stored_crc_end == actual_crc,
            "checkpoint: checksum mismatch (file corrupt or truncated)");

  Cursor cur(buf.data(), buf.size() - 4);
  G2N_CHECK(cur.str(4) == "RFRI", "checkpoint: bad magic bytes");
  const uint32_t version = cur.u32();
  G2N_CHECK(version == kCheckpointVersion, "checkpoint: format version ",
            version, " not supported (expected ", kCheckpointVersion, ")");
  const uint32_t count = cur.u32();
  std::vector<TensorBlob> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    TensorBlob e;
    const uint32_t name_len = cur.u32();
    e.name = cur.str(name_len);
    const uint32_t rank = cur.u32();
    G2N_CHECK(rank <= 4, "checkpoint: entry '", e.name, "' rank ", rank,
              " exceeds 4");
    std::initializer_list<int64_t> empty{};
    std::vector<int64_t> dims;
    for (uint32_t r = 0; r < rank; ++r) dims.push_back(int64_t(cur.u32()));
    switch (rank) {
      case 0: e.shape = Shape(empty); break;
      case 1: e.shape = Shape{dims[0]}; break;
      case 2: e.shape = Shape{dims[0], dims[1]}; break;
      case 3: e.shape = Shape{dims[0], dims[1], dims[2]}; break;
      default: e.shape = Shape{dims[0], dims[1], dims[2], dims[3]}; break;
    }
    e.data.resize(size_t(e.shape.numel()));
    cur.f32(e.data.data(), e.data.size());
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace g2n

#include "g2n/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "g2n/error.hpp"

namespace g2n {
namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;
constexpr int64_t kCifarRecord = 3073;

uint32_t read_be32(std::istream& in, const std::string& path) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  G2N_CHECK(in.good(), "idx: truncated header in '", path, "'");
  return uint32_t(b[0]) << 24 | uint32_t(b[1]) << 16 | uint32_t(b[2]) << 8 |
         uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8),
                        uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// Presents one source image as 3 x 32 x 32 values in [0, 1]: grayscale
// replicated across channels, smaller sources centered with zero padding.
template <typename T>
void present_base(const Dataset& ds, int64_t index, T* out) {
  const int64_t side = kInputSide;
  const int64_t off_h = (side - ds.height) / 2;
  const int64_t off_w = (side - ds.width) / 2;
  const uint8_t* src = ds.image(index);
  std::fill(out, out + 3 * side * side, T(0));
  for (int64_t c = 0; c < 3; ++c) {
    const int64_t sc = ds.channels == 1 ? 0 : c;
    const uint8_t* plane = src + sc * ds.height * ds.width;
    for (int64_t y = 0; y < ds.height; ++y)
      for (int64_t x = 0; x < ds.width; ++x)
        out[(c * side + y + off_h) * side + x + off_w] =
            T(plane[y * ds.width + x]) / T(255);
  }
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  G2N_CHECK(imgs.good(), "idx: cannot open '", images_path, "'");
  const uint32_t img_magic = read_be32(imgs, images_path);
  G2N_CHECK(img_magic == kIdxImagesMagic, "idx: bad image magic 0x", std::hex,
            img_magic, " in '", images_path, "'");
  const uint32_t count = read_be32(imgs, images_path);
  const uint32_t rows = read_be32(imgs, images_path);
  const uint32_t cols = read_be32(imgs, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  G2N_CHECK(labs.good(), "idx: cannot open '", labels_path, "'");
  const uint32_t lab_magic = read_be32(labs, labels_path);
  G2N_CHECK(lab_magic == kIdxLabelsMagic, "idx: bad label magic 0x", std::hex,
            lab_magic, " in '", labels_path, "'");
  const uint32_t lab_count = read_be32(labs, labels_path);
  G2N_CHECK(count == lab_count, "idx: image count ", count,
            " does not match label count ", lab_count);

  Dataset ds;
  ds.count = count;
  ds.channels = 1;
  ds.height = rows;
  ds.width = cols;
  ds.pixels.resize(size_t(count) * rows * cols);
  imgs.read(reinterpret_cast<char*>(ds.pixels.data()),
            std::streamsize(ds.pixels.size()));
  G2N_CHECK(imgs.gcount() == std::streamsize(ds.pixels.size()),
            "idx: truncated image data in '", images_path, "' (expected ",
            ds.pixels.size(), " bytes)");

  std::vector<uint8_t> raw(count);
  labs.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  G2N_CHECK(labs.gcount() == std::streamsize(raw.size()),
            "idx: truncated label data in '", labels_path, "'");
  ds.labels.assign(raw.begin(), raw.end());
  ds.num_classes = 10;
  return ds;
}

Dataset load_cifar10_bin(const std::vector<std::string>& paths) {
  G2N_CHECK(!paths.empty(), "cifar: no input files");
  Dataset ds;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.num_classes = 10;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    G2N_CHECK(in.good(), "cifar: cannot open '", path, "'");
    const int64_t size = in.tellg();
    G2N_CHECK(size > 0 && size % kCifarRecord == 0, "cifar: file '", path,
              "' length ", size, " is not a multiple of ", kCifarRecord);
    in.seekg(0);
    const int64_t records = size / kCifarRecord;
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(buf.data()), size);
    G2N_CHECK(in.good(), "cifar: read from '", path, "' failed");
    for (int64_t r = 0; r < records; ++r) {
      const uint8_t* rec = buf.data() + r * kCifarRecord;
      G2N_CHECK(rec[0] <= 9, "cifar: label byte ", int(rec[0]),
                " > 9 in '", path, "' record ", r);
      ds.labels.push_back(rec[0]);
      ds.pixels.insert(ds.pixels.end(), rec + 1, rec + kCifarRecord);
    }
    ds.count += records;
  }
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& ds) {
  G2N_CHECK(ds.channels == 1, "idx: writer requires grayscale data");
  std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
  G2N_CHECK(imgs.good(), "idx: cannot open '", images_path, "' for writing");
  write_be32(imgs, kIdxImagesMagic);
  write_be32(imgs, uint32_t(ds.count));
  write_be32(imgs, uint32_t(ds.height));
  write_be32(imgs, uint32_t(ds.width));
  imgs.write(reinterpret_cast<const char*>(ds.pixels.data()),
             std::streamsize(ds.pixels.size()));
  G2N_CHECK(imgs.good(), "idx: write to '", images_path, "' failed");

  std::ofstream labs(labels_path, std::ios::binary | std::ios::trunc);
  G2N_CHECK(labs.good(), "idx: cannot open '", labels_path, "' for writing");
  write_be32(labs, kIdxLabelsMagic);
  write_be32(labs, uint32_t(ds.count));
  for (int v : ds.labels) {
    const uint8_t b = uint8_t(v);
    labs.write(reinterpret_cast<const char*>(&b), 1);
  }
  G2N_CHECK(labs.good(), "idx: write to '", labels_path, "' failed");
}

void write_cifar10_bin(const std::string& path, const Dataset& ds) {
  G2N_CHECK(ds.channels == 3 && ds.height == 32 && ds.width == 32,
            "cifar: writer requires 3x32x32 data");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  G2N_CHECK(out.good(), "cifar: cannot open '", path, "' for writing");
  for (int64_t i = 0; i < ds.count; ++i) {
    const uint8_t label = uint8_t(ds.labels[size_t(i)]);
    out.write(reinterpret_cast<const char*>(&label), 1);
    out.write(reinterpret_cast<const char*>(ds.image(i)), 3072);
  }
  G2N_CHECK(out.good(), "cifar: write to '", path, "' failed");
}

ChannelStats compute_channel_stats(const Dataset& ds,
                                   const std::vector<int64_t>& indices) {
  G2N_CHECK(!indices.empty(), "stats: empty index set");
  const int64_t plane = kInputSide * kInputSide;
  std::vector<double> img(size_t(3 * plane));
  std::array<double, 3> sum{0, 0, 0}, sumsq{0, 0, 0};
  for (int64_t i : indices) {
    present_base(ds, i, img.data());
    for (int64_t c = 0; c < 3; ++c) {
      const double* p = img.data() + c * plane;
      for (int64_t k = 0; k < plane; ++k) {
        sum[size_t(c)] += p[k];
        sumsq[size_t(c)] += p[k] * p[k];
      }
    }
  }
  const double n = double(indices.size()) * double(plane);
  ChannelStats st;
  for (int64_t c = 0; c < 3; ++c) {
    st.mean[size_t(c)] = sum[size_t(c)] / n;
    const double var =
        std::max(0.0, sumsq[size_t(c)] / n - st.mean[size_t(c)] * st.mean[size_t(c)]);
    st.stddev[size_t(c)] = std::max(1e-6, std::sqrt(var));
  }
  return st;
}

template <typename T>
void preprocess_into(const Dataset& ds, int64_t index, AugmentPolicy policy,
                     const ChannelStats& stats, bool allow_hflip, Rng& rng,
                     T* out) {
  const int64_t side = kInputSide;
  const int64_t plane = side * side;
  std::vector<T> base(size_t(3 * plane));
  present_base(ds, index, base.data());

  int64_t oy = 4, ox = 4;
  bool flip = false;
  if (policy == AugmentPolicy::Train) {
    // Offsets into the zero-padded 40x40 frame; (4, 4) is the identity crop.
    oy = int64_t(rng.below(9));
    ox = int64_t(rng.below(9));
    flip = allow_hflip && rng.bernoulli(0.5);
  }

  for (int64_t c = 0; c < 3; ++c) {
    const T* src = base.data() + c * plane;
    T* dst = out + c * plane;
    const T mean = T(stats.mean[size_t(c)]);
    const T inv_std = T(1.0 / stats.stddev[size_t(c)]);
    for (int64_t y = 0; y < side; ++y) {
      const int64_t sy = y + oy - 4;
      for (int64_t x = 0; x < side; ++x) {
        const int64_t sx0 = x + ox - 4;
        const int64_t sx = flip ? side - 1 - sx0 : sx0;
        T v = T(0);
        if (sy >= 0 && sy < side && sx >= 0 && sx < side) v = src[sy * side + sx];
        dst[y * side + x] = (v - mean) * inv_std;
      }
    }
  }
}

std::vector<std::vector<int64_t>> make_epoch_batches(
    const std::vector<int64_t>& indices, int64_t batch_size, Rng& rng) {
  G2N_CHECK(batch_size >= 1, "batches: batch_size must be >= 1, got ",
            batch_size);
  std::vector<int64_t> order = indices;
  for (int64_t i = int64_t(order.size()) - 1; i > 0; --i) {
    const int64_t j = int64_t(rng.below(uint64_t(i) + 1));
    std::swap(order[size_t(i)], order[size_t(j)]);
  }
  std::vector<std::vector<int64_t>> batches;
  for (size_t at = 0; at < order.size(); at += size_t(batch_size))
    batches.emplace_back(order.begin() + int64_t(at),
                         order.begin() +
                             int64_t(std::min(order.size(),
                                              at + size_t(batch_size))));
  return batches;
}

template <typename T>
LabeledBatch<T> make_batch(const Dataset& ds,
                           const std::vector<int64_t>& indices,
                           AugmentPolicy policy, const ChannelStats& stats,
                           bool allow_hflip, Rng& rng) {
  const int64_t n = int64_t(indices.size());
  G2N_CHECK(n >= 1, "batch: empty index list");
  const int64_t per = 3 * kInputSide * kInputSide;
  std::vector<T> values(size_t(n * per));
  LabeledBatch<T> batch;
  for (int64_t i = 0; i < n; ++i) {
    preprocess_into(ds, indices[size_t(i)], policy, stats, allow_hflip, rng,
                    values.data() + i * per);
    batch.labels.push_back(ds.labels[size_t(indices[size_t(i)])]);
  }
  batch.images = Tensor<T>::from(Shape{n, 3, kInputSide, kInputSide},
                                 std::move(values));
  batch.indices = indices;
  return batch;
}

namespace {

// 5x7 digit glyphs, one row byte per scanline, bit 4 leftmost.
constexpr uint8_t kDigitFont[10][7] = {
    {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},  // 0
    {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // 1
    {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111},  // 2
    {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},  // 3
    {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},  // 4
    {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},  // 5
    {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},  // 6
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},  // 7
    {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},  // 8
    {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},  // 9
};

double glyph_sample(int digit, double gx, double gy) {
  // Bilinear sample of the 5x7 bitmap; outside is background.
  const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
  const double fx = gx - x0, fy = gy - y0;
  auto bit = [&](int x, int y) -> double {
    if (x < 0 || x >= 5 || y < 0 || y >= 7) return 0.0;
    return (kDigitFont[digit][y] >> (4 - x)) & 1 ? 1.0 : 0.0;
  };
  return bit(x0, y0) * (1 - fx) * (1 - fy) + bit(x0 + 1, y0) * fx * (1 - fy) +
         bit(x0, y0 + 1) * (1 - fx) * fy + bit(x0 + 1, y0 + 1) * fx * fy;
}

}  // namespace

Dataset synthetic_digits(int64_t count, uint64_t seed) {
  G2N_CHECK(count >= 1, "synthetic: count must be >= 1");
  Dataset ds;
  ds.count = count;
  ds.channels = 1;
  ds.height = 28;
  ds.width = 28;
  ds.num_classes = 10;
  ds.pixels.resize(size_t(count) * 28 * 28);
  ds.labels.resize(size_t(count));
  Rng rng(seed);
  for (int64_t i = 0; i < count; ++i) {
    const int digit = int(i % 10);
    ds.labels[size_t(i)] = digit;
    const double scale = rng.uniform(2.2, 3.2);      // pixels per glyph cell
    const double angle = rng.uniform(-0.22, 0.22);   // radians
    const double cx = 13.5 + rng.uniform(-2.5, 2.5); // glyph center
    const double cy = 13.5 + rng.uniform(-2.5, 2.5);
    const double intensity = rng.uniform(0.72, 1.0);
    const double ca = std::cos(angle), sa = std::sin(angle);
    uint8_t* img = ds.pixels.data() + i * 28 * 28;
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        const double dx = x - cx, dy = y - cy;
        // Inverse rotation back into glyph space (glyph is 5x7 cells).
        const double gx = (ca * dx + sa * dy) / scale + 2.0;
        const double gy = (-sa * dx + ca * dy) / scale + 3.0;
        double v = glyph_sample(digit, gx, gy) * intensity;
        v += rng.uniform(0.0, 0.08);
        if (rng.bernoulli(0.01)) v += rng.uniform(0.2, 0.6);
        img[y * 28 + x] = uint8_t(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
      }
  }
  return ds;
}

template void preprocess_into<float>(const Dataset&, int64_t, AugmentPolicy,
                                     const ChannelStats&, bool, Rng&, float*);
template void preprocess_into<double>(const Dataset&, int64_t, AugmentPolicy,
                                      const ChannelStats&, bool, Rng&, double*);
template LabeledBatch<float> make_batch<float>(const Dataset&,
                                               const std::vector<int64_t>&,
                                               AugmentPolicy,
                                               const ChannelStats&, bool, Rng&);
template LabeledBatch<double> make_batch<double>(const Dataset&,
                                                 const std::vector<int64_t>&,
                                                 AugmentPolicy,
                                                 const ChannelStats&, bool,
                                                 Rng&);

}  // namespace g2n

#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "g2n/error.hpp"

namespace g2n {

// Extents of a dense tensor, rank 0 (scalar) through 4 (N x C x H x W).
class Shape {
 public:
  Shape() : rank_(0), d_{1, 1, 1, 1} {}
  Shape(std::initializer_list<int64_t> dims) : rank_(0), d_{1, 1, 1, 1} {
    G2N_CHECK(dims.size() <= 4, "shape rank ", dims.size(), " exceeds 4");
    for (int64_t v : dims) {
      G2N_CHECK(v >= 1, "shape extent must be >= 1, got ", v);
      d_[rank_++] = v;
    }
  }

  int rank() const { return rank_; }
  int64_t dim(int i) const {
    G2N_CHECK(i >= 0 && i < rank_, "shape dim index ", i, " out of range for rank ", rank_);
    return d_[i];
  }
  int64_t operator[](int i) const { return dim(i); }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= d_[i];
    return n;
  }

  // NCHW accessors, valid for rank-4 shapes.
  int64_t n() const { return dim4(0); }
  int64_t c() const { return dim4(1); }
  int64_t h() const { return dim4(2); }
  int64_t w() const { return dim4(3); }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (d_[i] != o.d_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string(d_[i]);
    }
    s += "]";
    return s;
  }

 private:
  int64_t dim4(int i) const {
    G2N_CHECK(rank_ == 4, "NCHW accessor requires rank-4 shape, got rank ", rank_);
    return d_[i];
  }

  int rank_;
  std::array<int64_t, 4> d_;
};

}  // namespace g2n

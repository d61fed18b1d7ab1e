/*
 * Copyright 2026 The dcpseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>

#include "dcpseg/errors.hpp"

namespace dcpseg {

/// Voxel counts per axis. Linear layout is x-fastest: x + w * (y + h * z).
struct Dims {
  int w = 1;
  int h = 1;
  int l = 1;

  constexpr Eigen::Index size() const { return Eigen::Index(w) * h * l; }
  constexpr Eigen::Index index(int x, int y, int z) const { return x + Eigen::Index(w) * (y + Eigen::Index(h) * z); }
  constexpr bool contains(int x, int y, int z) const { return x >= 0 && y >= 0 && z >= 0 && x < w && y < h && z < l; }
  constexpr std::array<int, 3> coords(Eigen::Index i) const {
    const int x = int(i % w);
    const Eigen::Index rest = i / w;
    return {x, int(rest % h), int(rest / h)};
  }
  constexpr int axis(int a) const { return a == 0 ? w : (a == 1 ? h : l); }

  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Throws ShapeError unless every axis is >= 1 and the voxel count fits Eigen::Index.
void validate(const Dims& d);

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
}

/// Dense 3D grid templated on the voxel scalar.
template <typename Scalar>
class Grid {
 public:
  using scalar_type = Scalar;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Grid() = default;
  explicit Grid(const Dims& dims, Scalar fill = Scalar(0)) : dims_(dims) {
    validate(dims);
    data_ = Storage::Constant(dims.size(), fill);
  }
  Grid(const Dims& dims, Storage data) : dims_(dims), data_(std::move(data)) {
    validate(dims);
    if (data_.size() != dims.size()) throw ShapeError("grid payload length does not match " + to_string(dims));
  }
  Grid(const Dims& dims, std::initializer_list<Scalar> values) : Grid(dims, Storage(Eigen::Index(values.size()))) {
    std::copy(values.begin(), values.end(), data_.data());
  }

  const Dims& dims() const { return dims_; }
  Eigen::Index size() const { return data_.size(); }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }
  Scalar& operator()(int x, int y, int z) { return data_[dims_.index(x, y, z)]; }
  Scalar operator()(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  std::span<Scalar> values() { return {data_.data(), std::size_t(data_.size())}; }
  std::span<const Scalar> values() const { return {data_.data(), std::size_t(data_.size())}; }

  template <typename Other>
  Grid<Other> cast() const {
    return Grid<Other>(dims_, data_.template cast<Other>().eval());
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.dims_ == b.dims_ && (a.data_ == b.data_).all();
  }

 private:
  Dims dims_;
  Storage data_;
};

using Volume = Grid<float>;
using ProbVolume = Grid<float>;
/// Hard {0,1} labels. Binary scope only.
using LabelVolume = Grid<std::uint8_t>;
/// Plain {0,1} grid with no structural invariant; result of mask algebra.
using BitGrid = Grid<std::uint8_t>;

/// Axis-aligned cuboid [origin, origin + size).
struct Box {
  std::array<int, 3> origin{0, 0, 0};
  std::array<int, 3> size{0, 0, 0};

  bool contains(int x, int y, int z) const {
    return x >= origin[0] && x < origin[0] + size[0] && y >= origin[1] && y < origin[1] + size[1] &&
           z >= origin[2] && z < origin[2] + size[2];
  }
  Eigen::Index volume() const { return Eigen::Index(size[0]) * size[1] * size[2]; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Bits are 0 inside `zero_box` and 1 elsewhere.
class BinaryMask {
 public:
  BinaryMask(const Dims& dims, const Box& zero_box);
  static BinaryMask ones(const Dims& dims) { return BinaryMask(dims, Box{}); }

  const Dims& dims() const { return bits_.dims(); }
  const BitGrid& bits() const { return bits_; }
  const Box& zero_box() const { return zero_box_; }
  operator const BitGrid&() const { return bits_; }

 private:
  BitGrid bits_;
  Box zero_box_;
};

/// a where m == 1, b where m == 0.
template <typename Scalar>
Grid<Scalar> composite(const Grid<Scalar>& a, const Grid<Scalar>& b, const BitGrid& m) {
  require_same_dims(a.dims(), b.dims(), "composite");
  require_same_dims(a.dims(), m.dims(), "composite mask");
  return Grid<Scalar>(a.dims(), (m.array() != 0).select(a.array(), b.array()).eval());
}

BitGrid mask_and(const BitGrid& m1, const BitGrid& m2);
BitGrid mask_or(const BitGrid& m1, const BitGrid& m2);
BitGrid mask_not(const BitGrid& m);

inline Eigen::Index popcount(const BitGrid& m) { return (m.array() != 0).count(); }

/// Labels as 0/1 probabilities, handy for feeding ground truth where a ProbVolume is expected.
template <typename Scalar = float>
Grid<Scalar> to_prob(const LabelVolume& y) {
  return y.cast<Scalar>();
}

}  // namespace dcpseg

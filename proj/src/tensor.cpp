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

#include "dcpseg/tensor.hpp"

namespace dcpseg {

std::string to_string(const Dims& d) {
  return std::to_string(d.w) + "x" + std::to_string(d.h) + "x" + std::to_string(d.l);
}

void validate(const Dims& d) {
  if (d.w < 1 || d.h < 1 || d.l < 1) throw ShapeError("dims must be positive, got " + to_string(d));
  const auto max = std::numeric_limits<Eigen::Index>::max();
  if (Eigen::Index(d.w) > max / d.h || Eigen::Index(d.w) * d.h > max / d.l)
    throw ShapeError("voxel count overflows index type for " + to_string(d));
}

BinaryMask::BinaryMask(const Dims& dims, const Box& zero_box) : bits_(dims, 1), zero_box_(zero_box) {
  for (int a = 0; a < 3; ++a) {
    if (zero_box.origin[a] < 0 || zero_box.size[a] < 0 || zero_box.origin[a] + zero_box.size[a] > dims.axis(a))
      throw ShapeError("zero box does not fit within " + to_string(dims));
  }
  if (zero_box.volume() == 0) {
    zero_box_ = Box{};
    return;
  }
  for (int z = zero_box.origin[2]; z < zero_box.origin[2] + zero_box.size[2]; ++z)
    for (int y = zero_box.origin[1]; y < zero_box.origin[1] + zero_box.size[1]; ++y)
      for (int x = zero_box.origin[0]; x < zero_box.origin[0] + zero_box.size[0]; ++x) bits_(x, y, z) = 0;
}

BitGrid mask_and(const BitGrid& m1, const BitGrid& m2) {
  require_same_dims(m1.dims(), m2.dims(), "mask_and");
  return BitGrid(m1.dims(), ((m1.array() != 0) && (m2.array() != 0)).cast<std::uint8_t>().eval());
}

BitGrid mask_or(const BitGrid& m1, const BitGrid& m2) {
  require_same_dims(m1.dims(), m2.dims(), "mask_or");
  return BitGrid(m1.dims(), ((m1.array() != 0) || (m2.array() != 0)).cast<std::uint8_t>().eval());
}

BitGrid mask_not(const BitGrid& m) {
  return BitGrid(m.dims(), (m.array() == 0).cast<std::uint8_t>().eval());
}

}  // namespace dcpseg

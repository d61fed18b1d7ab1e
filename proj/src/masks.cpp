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

#include "dcpseg/masks.hpp"

#include <algorithm>
#include <cmath>

namespace dcpseg {

int cut_side(int axis_len, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask side ratio must lie in [0,1]");
  // 1e-9 absorbs representation error so that 6 * (2/3) floors to 4, not 3.
  const int side = int(std::floor(double(axis_len) * ratio + 1e-9));
  return std::clamp(side, 0, axis_len);
}

BinaryMask gen_mask(const MaskSpec& spec, Rng& rng) {
  validate(spec.dims);
  Box box;
  for (int a = 0; a < 3; ++a) box.size[a] = cut_side(spec.dims.axis(a), spec.side_ratio);
  for (int a = 0; a < 3; ++a) {
    const int slack = spec.dims.axis(a) - box.size[a];
    if (spec.placement == Placement::centered) {
      box.origin[a] = slack / 2;
    } else {
      std::uniform_int_distribution<int> offset(0, slack);
      box.origin[a] = offset(rng);
    }
  }
  return BinaryMask(spec.dims, box);
}

Path sample_path(Rng& rng, double p_a) {
  if (!(p_a >= 0.0 && p_a <= 1.0)) throw ConfigError("path probability must lie in [0,1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < p_a ? Path::A : Path::B;
}

BitGrid loss_mask(Path path, const BitGrid& outer, const BitGrid& inner) {
  if (path == Path::A) return mask_and(outer, inner);
  return mask_or(mask_not(inner), outer);
}

}  // namespace dcpseg

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

#include <random>
#include <string>

#include "dcpseg/tensor.hpp"

namespace dcpseg {

/// Every stochastic routine takes its generator explicitly; callers own determinism.
using Rng = std::mt19937_64;

enum class Placement { random_uniform, centered };

struct MaskSpec {
  Dims dims;
  /// Fraction of each axis length covered by the zero cuboid.
  double side_ratio = 2.0 / 3.0;
  Placement placement = Placement::random_uniform;
};

/// Copy-paste path. A updates teacher 1, B updates teacher 2.
enum class Path { A, B };

inline char to_char(Path p) { return p == Path::A ? 'A' : 'B'; }

/// Zero-cuboid side length per axis: floor(len * ratio), clamped to [0, len].
int cut_side(int axis_len, double ratio);

/// Cuboid cut mask. Consumes three draws from `rng` for random placement, none when centered.
BinaryMask gen_mask(const MaskSpec& spec, Rng& rng);

Path sample_path(Rng& rng, double p_a);

/// Labeled-provenance map of the first student input.
///   A: outer AND inner
///   B: (NOT inner) OR outer
/// `inner` is M_a on path A and M_b on path B.
BitGrid loss_mask(Path path, const BitGrid& outer, const BitGrid& inner);

}  // namespace dcpseg

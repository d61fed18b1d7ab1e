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

#include <utility>

#include "dcpseg/masks.hpp"
#include "dcpseg/tensor.hpp"

namespace dcpseg {

/// The four members of a labeled/unlabeled quadruple, in the roles the
/// compositing assigns them. For images these are (I_la, I_ua, I_lb, I_ub);
/// for labels the same slots carry (y_a, p_a, y_b, p_b), which keeps every
/// composite label voxel aligned with the image voxel it supervises.
template <typename Scalar>
struct Quad {
  const Grid<Scalar>& la;
  const Grid<Scalar>& ua;
  const Grid<Scalar>& lb;
  const Grid<Scalar>& ub;
};

/// Double copy-paste for one path.
///
/// Path A: step one cuts `inner` (M_a) within group a, step two pastes group b
/// into the `outer` (M) cut:
///   out1 = (la*Ma + ua*(1-Ma))*M + ub*(1-M)
///   out2 = (ua*Ma + la*(1-Ma))*M + lb*(1-M)
/// Path B: step one cuts `inner` (M_b) within group b, and group a still
/// occupies the M region:
///   out1 = la*M + (ub*Mb + lb*(1-Mb))*(1-M)
///   out2 = ua*M + (lb*Mb + ub*(1-Mb))*(1-M)
template <typename Scalar>
std::pair<Grid<Scalar>, Grid<Scalar>> double_copy_paste(const Quad<Scalar>& q, Path path, const BitGrid& inner,
                                                        const BitGrid& outer) {
  if (path == Path::A) {
    return {composite(composite(q.la, q.ua, inner), q.ub, outer),
            composite(composite(q.ua, q.la, inner), q.lb, outer)};
  }
  return {composite(q.la, composite(q.ub, q.lb, inner), outer),
          composite(q.ua, composite(q.lb, q.ub, inner), outer)};
}

/// Images of one training quadruple plus the ground truth of its labeled pair.
struct DcpBatch {
  const Volume& la;
  const Volume& ua;
  const Volume& lb;
  const Volume& ub;
  const LabelVolume& y_a;
  const LabelVolume& y_b;
  Path path;
  const BinaryMask& inner;
  const BinaryMask& outer;
};

/// Student inputs (X_in1, X_in2).
std::pair<Volume, Volume> dcp_inputs(const DcpBatch& batch);

/// Student targets (Y_out1, Y_out2). Pseudo-labels must already be component-filtered.
std::pair<LabelVolume, LabelVolume> dcp_labels(const LabelVolume& y_a, const LabelVolume& y_b, const LabelVolume& p_a,
                                               const LabelVolume& p_b, Path path, const BitGrid& inner,
                                               const BitGrid& outer);

}  // namespace dcpseg

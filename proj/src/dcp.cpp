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

#include "dcpseg/dcp.hpp"

namespace dcpseg {

std::pair<Volume, Volume> dcp_inputs(const DcpBatch& batch) {
  return double_copy_paste(Quad<float>{batch.la, batch.ua, batch.lb, batch.ub}, batch.path, batch.inner.bits(),
                           batch.outer.bits());
}

std::pair<LabelVolume, LabelVolume> dcp_labels(const LabelVolume& y_a, const LabelVolume& y_b, const LabelVolume& p_a,
                                               const LabelVolume& p_b, Path path, const BitGrid& inner,
                                               const BitGrid& outer) {
  return double_copy_paste(Quad<std::uint8_t>{y_a, p_a, y_b, p_b}, path, inner, outer);
}

}  // namespace dcpseg

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

#include <optional>
#include <string>
#include <utility>

#include "dcpseg/tensor.hpp"

namespace dcpseg {

enum class Connectivity { six = 6, twenty_six = 26 };

enum class Regime { easy, hard };

inline const char* to_string(Regime r) { return r == Regime::easy ? "easy" : "hard"; }

/// How the two teacher maps are fused.
///   sse           pick the rule per volume from the dissimilarity threshold
///   sum_gt_1      always r1 + r2 > 1
///   both_gt_half  always r1 > 0.5 and r2 > 0.5
enum class EnsembleMode { sse, sum_gt_1, both_gt_half };

struct SseConfig {
  double threshold = 0.01;
  /// Smoothing factor of the logged dissimilarity curve; never used for the decision.
  double smooth_beta = 0.9;
  Connectivity connectivity = Connectivity::twenty_six;
};

struct SseDecision {
  double dissimilarity = 0.0;
  Regime regime = Regime::easy;
};

/// Mean absolute difference between two probability maps, in [0,1].
double dissimilarity(const ProbVolume& r1, const ProbVolume& r2);

LabelVolume fuse_sum_gt_1(const ProbVolume& r1, const ProbVolume& r2);
LabelVolume fuse_both_gt_half(const ProbVolume& r1, const ProbVolume& r2);

/// Staged selective ensemble: loose rule for hard volumes (dissimilarity above
/// the threshold), strict rule for easy ones.
std::pair<LabelVolume, SseDecision> sse_fuse(const ProbVolume& r1, const ProbVolume& r2, const SseConfig& cfg);

/// Fusion under any ensemble mode. The decision is always reported; only `sse` acts on it.
std::pair<LabelVolume, SseDecision> fuse(const ProbVolume& r1, const ProbVolume& r2, const SseConfig& cfg,
                                         EnsembleMode mode);

double smooth_curve(std::optional<double> prev, double value, double beta);

/// Keeps only the largest connected foreground component. Equal sizes go to
/// the component whose first voxel has the smallest linear index.
LabelVolume largest_component(const LabelVolume& pl, Connectivity connectivity = Connectivity::twenty_six);

}  // namespace dcpseg

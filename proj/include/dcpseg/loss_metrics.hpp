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

#include <array>
#include <string>

#include <json.hpp>

#include "dcpseg/tensor.hpp"

namespace dcpseg {

struct LossConfig {
  /// Weight of voxels whose target is a pseudo-label.
  double alpha = 0.5;
  double dice_eps = 1e-5;
  double ce_clamp = 1e-7;
  double w_dice = 0.5;
  double w_ce = 0.5;
};

void validate(const LossConfig& cfg);

/// Which side of the loss mask carries full weight.
enum class PrimaryRegion { mask, complement };

/// w[v] = 1 on the primary region and alpha elsewhere.
template <typename Scalar>
Grid<Scalar> loss_weights(const BitGrid& mask, double alpha, PrimaryRegion primary) {
  const Scalar in = primary == PrimaryRegion::mask ? Scalar(1) : Scalar(alpha);
  const Scalar out = primary == PrimaryRegion::mask ? Scalar(alpha) : Scalar(1);
  return Grid<Scalar>(mask.dims(), (mask.array() != 0).select(Grid<Scalar>(mask.dims(), in).array(), out).eval());
}

struct SegLoss {
  double ce = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

/// Weighted Dice + cross-entropy.
///
///   CE   = mean_v w[v] * ce(clamp(q[v]), y[v])
///   Dice = 1 - (2 sum w q y + eps) / (sum w q + sum w y + eps)
///   total = w_ce * CE + w_dice * Dice
///
/// When `dq` is given it receives d(total)/dq. Clamped voxels contribute no CE gradient.
template <typename Scalar>
SegLoss weighted_seg_loss(const Grid<Scalar>& q, const LabelVolume& y, const Grid<Scalar>& w, const LossConfig& cfg,
                          Grid<Scalar>* dq = nullptr);

/// Region-weighted loss of one student input: full weight on `primary`, alpha on the rest.
template <typename Scalar>
double masked_seg_loss(const Grid<Scalar>& q, const LabelVolume& y, const BitGrid& mask, double alpha,
                       PrimaryRegion primary, const LossConfig& cfg);

inline double total_loss(double l1, double l2) { return l1 + l2; }

/// Both-empty convention: 1.
double dice(const LabelVolume& a, const LabelVolume& b);
double jaccard(const LabelVolume& a, const LabelVolume& b);

using Spacing = std::array<double, 3>;

struct SurfaceDistances {
  double hd95 = 0.0;
  double asd = 0.0;
};

/// Foreground voxels with a face neighbour that is background or out of bounds.
BitGrid surface_voxels(const LabelVolume& a);

/// Pools the directed nearest-surface distances of both directions, then
/// reports their 95th percentile (linear interpolation) and mean.
/// Throws std::invalid_argument if either mask is empty.
SurfaceDistances surface_distances(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing = {1, 1, 1});

/// Linear-interpolated percentile on a copy of `values`, p in [0,100].
double percentile(std::vector<double> values, double p);

struct MetricReport {
  double dice = 0.0;
  double jaccard = 0.0;
  double hd95 = 0.0;
  double asd = 0.0;
  Spacing spacing{1, 1, 1};
  /// Set when one of the masks was empty and worst-case distances were substituted.
  bool flagged = false;
};

/// All four metrics of `pred` against `truth`. An empty side yields the grid
/// diagonal as hd95/asd and sets `flagged`.
MetricReport compute_metrics(const LabelVolume& pred, const LabelVolume& truth, const Spacing& spacing);

MetricReport mean_report(const std::vector<MetricReport>& reports);

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

}  // namespace dcpseg

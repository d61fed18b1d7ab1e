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

#include "dcpseg/sse.hpp"

#include <numeric>
#include <vector>

namespace dcpseg {

double dissimilarity(const ProbVolume& r1, const ProbVolume& r2) {
  require_same_dims(r1.dims(), r2.dims(), "dissimilarity");
  const double total = (r1.array().cast<double>() - r2.array().cast<double>()).abs().sum();
  return total / double(r1.size());
}

LabelVolume fuse_sum_gt_1(const ProbVolume& r1, const ProbVolume& r2) {
  require_same_dims(r1.dims(), r2.dims(), "fuse");
  return LabelVolume(r1.dims(), (r1.array() + r2.array() > 1.0f).cast<std::uint8_t>().eval());
}

LabelVolume fuse_both_gt_half(const ProbVolume& r1, const ProbVolume& r2) {
  require_same_dims(r1.dims(), r2.dims(), "fuse");
  return LabelVolume(r1.dims(), ((r1.array() > 0.5f) && (r2.array() > 0.5f)).cast<std::uint8_t>().eval());
}

std::pair<LabelVolume, SseDecision> fuse(const ProbVolume& r1, const ProbVolume& r2, const SseConfig& cfg,
                                         EnsembleMode mode) {
  if (!(cfg.threshold >= 0.0)) throw ConfigError("sse threshold must be non-negative");
  SseDecision decision;
  decision.dissimilarity = dissimilarity(r1, r2);
  decision.regime = decision.dissimilarity > cfg.threshold ? Regime::hard : Regime::easy;
  switch (mode) {
    case EnsembleMode::sum_gt_1:
      return {fuse_sum_gt_1(r1, r2), decision};
    case EnsembleMode::both_gt_half:
      return {fuse_both_gt_half(r1, r2), decision};
    case EnsembleMode::sse:
      break;
  }
  if (decision.regime == Regime::hard) return {fuse_sum_gt_1(r1, r2), decision};
  return {fuse_both_gt_half(r1, r2), decision};
}

std::pair<LabelVolume, SseDecision> sse_fuse(const ProbVolume& r1, const ProbVolume& r2, const SseConfig& cfg) {
  return fuse(r1, r2, cfg, EnsembleMode::sse);
}

double smooth_curve(std::optional<double> prev, double value, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("smoothing beta must lie in [0,1)");
  if (!prev) return value;
  return beta * *prev + (1.0 - beta) * value;
}

namespace {

// Union-find over voxel indices; roots are always the smallest index of their set.
class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), Eigen::Index(0)); }

  Eigen::Index find(Eigen::Index i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }

  void unite(Eigen::Index a, Eigen::Index b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<Eigen::Index> parent_;
};

}  // namespace

LabelVolume largest_component(const LabelVolume& pl, Connectivity connectivity) {
  const Dims& d = pl.dims();
  const Eigen::Index n = pl.size();
  DisjointSets sets{std::size_t(n)};

  // Raster scan, uniting each foreground voxel with already-visited neighbours.
  std::vector<std::array<int, 3>> back;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (connectivity == Connectivity::six && manhattan != 1) continue;
        back.push_back({dx, dy, dz});
      }

  for (int z = 0; z < d.l; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        const Eigen::Index i = d.index(x, y, z);
        if (!pl[i]) continue;
        for (const auto& o : back) {
          const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (d.contains(nx, ny, nz) && pl(nx, ny, nz)) sets.unite(i, d.index(nx, ny, nz));
        }
      }

  std::vector<Eigen::Index> count(std::size_t(n), 0);
  for (Eigen::Index i = 0; i < n; ++i)
    if (pl[i]) ++count[std::size_t(sets.find(i))];

  // Roots are minimal indices, so scanning upward with strict > implements the tie rule.
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < n; ++i)
    if (count[std::size_t(i)] > 0 && (best < 0 || count[std::size_t(i)] > count[std::size_t(best)])) best = i;

  LabelVolume out(d, 0);
  if (best < 0) return out;
  for (Eigen::Index i = 0; i < n; ++i)
    if (pl[i] && sets.find(i) == best) out[i] = 1;
  return out;
}

}  // namespace dcpseg

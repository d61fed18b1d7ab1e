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

// Generators and independent reference implementations shared by the unit
// tests and the acceptance binary. The oracles deliberately avoid the library
// code paths they check: plain loops, explicit queues, all-pairs scans.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <vector>

#include "dcpseg/dcp.hpp"
#include "dcpseg/loss_metrics.hpp"
#include "dcpseg/masks.hpp"
#include "dcpseg/sse.hpp"
#include "dcpseg/tensor.hpp"

namespace dcpseg::testing {

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Dims random_dims(Rng& rng, int max_side) {
  return {uniform_int(rng, 1, max_side), uniform_int(rng, 1, max_side), uniform_int(rng, 1, max_side)};
}

inline Volume random_volume(const Dims& d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Volume v(d);
  for (auto& x : v.values()) x = float(uniform_real(rng, lo, hi));
  return v;
}

inline ProbVolume random_prob(const Dims& d, Rng& rng) { return random_volume(d, rng, 0.0, 1.0); }

inline LabelVolume random_labels(const Dims& d, Rng& rng, double p_one = 0.5) {
  LabelVolume v(d);
  std::bernoulli_distribution coin(p_one);
  for (auto& x : v.values()) x = coin(rng) ? 1 : 0;
  return v;
}

/// Any single-cuboid mask, including empty and full cuts.
inline BinaryMask random_mask(const Dims& d, Rng& rng) {
  Box b;
  for (int a = 0; a < 3; ++a) {
    b.size[std::size_t(a)] = uniform_int(rng, 0, d.axis(a));
    b.origin[std::size_t(a)] = uniform_int(rng, 0, d.axis(a) - b.size[std::size_t(a)]);
  }
  return BinaryMask(d, b);
}

// ---- Provenance ----------------------------------------------------------------

enum class Source : std::uint8_t { la, ua, lb, ub };

/// Per-voxel source image of X_in1 and X_in2, tracked by direct case analysis
/// of the compositing formulas, voxel by voxel.
inline std::pair<std::vector<Source>, std::vector<Source>> track_sources(Path path, const BitGrid& inner,
                                                                         const BitGrid& outer) {
  std::vector<Source> s1(std::size_t(inner.size())), s2(std::size_t(inner.size()));
  for (Eigen::Index v = 0; v < inner.size(); ++v) {
    const bool mi = inner[v] != 0, mo = outer[v] != 0;
    if (path == Path::A) {
      s1[std::size_t(v)] = mo ? (mi ? Source::la : Source::ua) : Source::ub;
      s2[std::size_t(v)] = mo ? (mi ? Source::ua : Source::la) : Source::lb;
    } else {
      s1[std::size_t(v)] = mo ? Source::la : (mi ? Source::ub : Source::lb);
      s2[std::size_t(v)] = mo ? Source::ua : (mi ? Source::lb : Source::ub);
    }
  }
  return {s1, s2};
}

inline bool is_labeled(Source s) { return s == Source::la || s == Source::lb; }

// ---- Connected components --------------------------------------------------------

inline std::vector<std::array<int, 3>> neighbor_offsets(Connectivity c) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (c == Connectivity::six && manhattan != 1) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

/// Breadth-first flood fill; keeps the biggest component, ties to the one whose
/// lowest linear index is smallest (raster order finds it first).
inline LabelVolume bfs_largest_component(const LabelVolume& pl, Connectivity c) {
  const Dims d = pl.dims();
  const auto nbrs = neighbor_offsets(c);
  std::vector<int> comp(std::size_t(pl.size()), -1);
  std::vector<std::size_t> sizes;
  for (Eigen::Index start = 0; start < pl.size(); ++start) {
    if (!pl[start] || comp[std::size_t(start)] >= 0) continue;
    const int id = int(sizes.size());
    std::size_t count = 0;
    std::deque<Eigen::Index> queue{start};
    comp[std::size_t(start)] = id;
    while (!queue.empty()) {
      const Eigen::Index v = queue.front();
      queue.pop_front();
      ++count;
      const auto [x, y, z] = d.coords(v);
      for (const auto& o : nbrs) {
        const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
        if (!d.contains(nx, ny, nz)) continue;
        const Eigen::Index u = d.index(nx, ny, nz);
        if (pl[u] && comp[std::size_t(u)] < 0) {
          comp[std::size_t(u)] = id;
          queue.push_back(u);
        }
      }
    }
    sizes.push_back(count);
  }
  LabelVolume out(d, 0);
  if (sizes.empty()) return out;
  int best = 0;
  for (int i = 1; i < int(sizes.size()); ++i)
    if (sizes[std::size_t(i)] > sizes[std::size_t(best)]) best = i;
  for (Eigen::Index v = 0; v < pl.size(); ++v)
    if (comp[std::size_t(v)] == best) out[v] = 1;
  return out;
}

// ---- Overlap and surface distances -----------------------------------------------------

struct SetCounts {
  double a = 0, b = 0, both = 0, either = 0;
};

inline SetCounts set_counts(const LabelVolume& a, const LabelVolume& b) {
  SetCounts s;
  for (Eigen::Index v = 0; v < a.size(); ++v) {
    const bool x = a[v] != 0, y = b[v] != 0;
    s.a += x;
    s.b += y;
    s.both += x && y;
    s.either += x || y;
  }
  return s;
}

inline std::vector<std::array<int, 3>> surface_points(const LabelVolume& m) {
  const Dims d = m.dims();
  std::vector<std::array<int, 3>> out;
  for (int z = 0; z < d.l; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        if (!m(x, y, z)) continue;
        const int n[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
        bool edge = false;
        for (const auto& p : n) edge = edge || !d.contains(p[0], p[1], p[2]) || !m(p[0], p[1], p[2]);
        if (edge) out.push_back({x, y, z});
      }
  return out;
}

/// All-pairs nearest distances, pooled over both directions.
inline std::vector<double> brute_surface_distances(const LabelVolume& a, const LabelVolume& b, const Spacing& sp) {
  const auto sa = surface_points(a), sb = surface_points(b);
  auto directed = [&](const auto& from, const auto& to, std::vector<double>& out) {
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dx = (p[0] - q[0]) * sp[0], dy = (p[1] - q[1]) * sp[1], dz = (p[2] - q[2]) * sp[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      out.push_back(std::sqrt(best));
    }
  };
  std::vector<double> all;
  directed(sa, sb, all);
  directed(sb, sa, all);
  return all;
}

/// Linear interpolation between order statistics at rank p/100 * (n - 1).
inline double oracle_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double rank = p / 100.0 * double(v.size() - 1);
  const auto lo = std::size_t(std::floor(rank));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - double(lo)) * (v[hi] - v[lo]);
}

/// A random nonempty mask made of a few filled boxes, so surfaces are nontrivial.
inline LabelVolume random_blobby(const Dims& d, Rng& rng) {
  LabelVolume m(d, 0);
  const int boxes = uniform_int(rng, 1, 3);
  for (int k = 0; k < boxes; ++k) {
    std::array<int, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[std::size_t(a)] = uniform_int(rng, 0, d.axis(a) - 1);
      hi[std::size_t(a)] = uniform_int(rng, lo[std::size_t(a)], d.axis(a) - 1);
    }
    for (int z = lo[2]; z <= hi[2]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[0]; x <= hi[0]; ++x) m(x, y, z) = 1;
  }
  // Sprinkle a little noise so the shapes are not always convex.
  std::bernoulli_distribution flip(0.05);
  for (auto& v : m.values())
    if (flip(rng)) v = v ? 0 : 1;
  if (popcount(m) == 0) m[0] = 1;
  return m;
}

}  // namespace dcpseg::testing

#include "dcpseg/model.hpp"

namespace dcpseg::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  Eigen::Index worst = -1;
  /// A +-h step on some coordinate flipped a hidden rectifier; the instance
  /// straddles a kink and the comparison was abandoned.
  bool kink_adjacent = false;
};

/// Central differences on every coordinate, in double precision. Relative
/// error is |a - n| / max(|a|, |n|, floor).
inline GradCheck finite_difference_check(const BackboneSpec& spec, const ParameterVector<double>& params,
                                         const Grid<double>& x, const LabelVolume& y, const Grid<double>& w,
                                         const LossConfig& cfg, double h = 1e-4, double floor = 1e-8) {
  const auto analytic = loss_and_grad<double>(spec, params, x, y, w, cfg);
  const std::vector<bool> base = probe_forward<double>(spec, params, x).active;
  GradCheck out;
  ParameterVector<double> p = params;
  auto loss_at = [&](double value, Eigen::Index i, bool& same_piece) {
    p[i] = value;
    const ForwardProbe<double> probe = probe_forward<double>(spec, p, x);
    same_piece = same_piece && probe.active == base;
    return weighted_seg_loss(probe.prob, y, w, cfg).total;
  };
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    bool same_piece = true;
    const double fp = loss_at(orig + h, i, same_piece);
    const double fm = loss_at(orig - h, i, same_piece);
    p[i] = orig;
    if (!same_piece) {
      out.kink_adjacent = true;
      return out;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.grad[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = i;
    }
  }
  return out;
}

struct GradInstance {
  ParameterVector<double> params;
  Grid<double> x;
  LabelVolume y;
  Grid<double> w;
};

inline GradInstance random_grad_instance(const BackboneSpec& spec, const Dims& d, Rng& rng) {
  GradInstance g{init_params<double>(spec, rng), random_volume(d, rng).cast<double>(), random_labels(d, rng),
                 Grid<double>(d)};
  // Nonzero biases so every term of the gradient is exercised.
  std::normal_distribution<double> n(0.0, 0.1);
  for (int l = 0; l < spec.layers(); ++l) {
    const auto off = Eigen::Index(spec.layer_offset(l) + spec.weight_count(l));
    for (int c = 0; c < spec.channels[std::size_t(l) + 1]; ++c) g.params[off + c] = n(rng);
  }
  for (auto& v : g.w.values()) v = uniform_int(rng, 0, 1) ? 1.0 : uniform_real(rng, 0.0, 1.0);
  return g;
}

}  // namespace dcpseg::testing

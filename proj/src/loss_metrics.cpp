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

#include "dcpseg/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace dcpseg {

void validate(const LossConfig& cfg) {
  if (!(cfg.alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(cfg.dice_eps > 0.0)) throw ConfigError("dice_eps must be positive");
  if (!(cfg.ce_clamp > 0.0 && cfg.ce_clamp < 0.5)) throw ConfigError("ce_clamp must lie in (0, 0.5)");
  if (!(cfg.w_dice >= 0.0 && cfg.w_ce >= 0.0)) throw ConfigError("loss combination weights must be non-negative");
}

template <typename Scalar>
SegLoss weighted_seg_loss(const Grid<Scalar>& q, const LabelVolume& y, const Grid<Scalar>& w, const LossConfig& cfg,
                          Grid<Scalar>* dq) {
  require_same_dims(q.dims(), y.dims(), "seg loss target");
  require_same_dims(q.dims(), w.dims(), "seg loss weights");
  const Eigen::Index n = q.size();
  const double lo = cfg.ce_clamp;
  const double hi = 1.0 - cfg.ce_clamp;

  double ce_sum = 0.0, s_qy = 0.0, s_q = 0.0, s_y = 0.0;
  for (Eigen::Index v = 0; v < n; ++v) {
    const double wv = double(w[v]);
    if (wv < 0.0) throw std::invalid_argument("loss weights must be non-negative");
    const double qv = double(q[v]);
    const double qc = std::clamp(qv, lo, hi);
    const double yv = y[v] ? 1.0 : 0.0;
    ce_sum += wv * -(yv * std::log(qc) + (1.0 - yv) * std::log(1.0 - qc));
    s_qy += wv * qv * yv;
    s_q += wv * qv;
    s_y += wv * yv;
  }
  const double eps = cfg.dice_eps;
  const double denom = s_q + s_y + eps;
  const double numer = 2.0 * s_qy + eps;

  SegLoss out;
  out.ce = ce_sum / double(n);
  out.dice = 1.0 - numer / denom;
  out.total = cfg.w_ce * out.ce + cfg.w_dice * out.dice;
  if (!std::isfinite(out.total)) throw NumericError("segmentation loss is not finite");

  if (dq) {
    *dq = Grid<Scalar>(q.dims());
    const double inv_n = 1.0 / double(n);
    const double inv_denom2 = 1.0 / (denom * denom);
    for (Eigen::Index v = 0; v < n; ++v) {
      const double wv = double(w[v]);
      const double qv = double(q[v]);
      const double yv = y[v] ? 1.0 : 0.0;
      double g_ce = 0.0;
      if (qv > lo && qv < hi) g_ce = wv * inv_n * (-yv / qv + (1.0 - yv) / (1.0 - qv));
      const double g_dice = -(2.0 * wv * yv * denom - numer * wv) * inv_denom2;
      (*dq)[v] = Scalar(cfg.w_ce * g_ce + cfg.w_dice * g_dice);
    }
  }
  return out;
}

template <typename Scalar>
double masked_seg_loss(const Grid<Scalar>& q, const LabelVolume& y, const BitGrid& mask, double alpha,
                       PrimaryRegion primary, const LossConfig& cfg) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  require_same_dims(q.dims(), mask.dims(), "loss mask");
  return weighted_seg_loss(q, y, loss_weights<Scalar>(mask, alpha, primary), cfg).total;
}

template SegLoss weighted_seg_loss<float>(const Grid<float>&, const LabelVolume&, const Grid<float>&,
                                          const LossConfig&, Grid<float>*);
template SegLoss weighted_seg_loss<double>(const Grid<double>&, const LabelVolume&, const Grid<double>&,
                                           const LossConfig&, Grid<double>*);
template double masked_seg_loss<float>(const Grid<float>&, const LabelVolume&, const BitGrid&, double, PrimaryRegion,
                                       const LossConfig&);
template double masked_seg_loss<double>(const Grid<double>&, const LabelVolume&, const BitGrid&, double,
                                        PrimaryRegion, const LossConfig&);

namespace {

struct Overlap {
  Eigen::Index a = 0, b = 0, both = 0;
};

Overlap overlap(const LabelVolume& a, const LabelVolume& b) {
  require_same_dims(a.dims(), b.dims(), "overlap metric");
  const auto fa = (a.array() != 0);
  const auto fb = (b.array() != 0);
  return {fa.count(), fb.count(), (fa && fb).count()};
}

}  // namespace

double dice(const LabelVolume& a, const LabelVolume& b) {
  const Overlap o = overlap(a, b);
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * double(o.both) / double(o.a + o.b);
}

double jaccard(const LabelVolume& a, const LabelVolume& b) {
  const Overlap o = overlap(a, b);
  const Eigen::Index uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return double(o.both) / double(uni);
}

BitGrid surface_voxels(const LabelVolume& a) {
  const Dims& d = a.dims();
  BitGrid s(d, 0);
  static constexpr int kFace[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int z = 0; z < d.l; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        if (!a(x, y, z)) continue;
        for (const auto& f : kFace) {
          const int nx = x + f[0], ny = y + f[1], nz = z + f[2];
          if (!d.contains(nx, ny, nz) || !a(nx, ny, nz)) {
            s(x, y, z) = 1;
            break;
          }
        }
      }
  return s;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas; squared distance along one axis with spacing `step`.
void distance_1d(const std::vector<double>& f, std::vector<double>& out, double step, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = int(f.size());
  const double s2 = step * step;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[std::size_t(q)] == kInf) continue;
    while (true) {
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -kInf;
        z[1] = kInf;
        break;
      }
      const int p = v[std::size_t(k)];
      const double cut = ((f[std::size_t(q)] + s2 * double(q) * q) - (f[std::size_t(p)] + s2 * double(p) * p)) /
                         (2.0 * s2 * double(q - p));
      if (cut <= z[std::size_t(k)]) {
        --k;
        continue;
      }
      ++k;
      v[std::size_t(k)] = q;
      z[std::size_t(k)] = cut;
      z[std::size_t(k) + 1] = kInf;
      break;
    }
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  k = 0;
  for (int p = 0; p < n; ++p) {
    while (z[std::size_t(k) + 1] < double(p)) ++k;
    const int site = v[std::size_t(k)];
    const double dd = double(p - site) * step;
    out[std::size_t(p)] = dd * dd + f[std::size_t(site)];
  }
}

// Exact squared Euclidean distance from every voxel to the nearest set voxel of `sites`.
std::vector<double> squared_distance_map(const BitGrid& sites, const Spacing& spacing) {
  const Dims& d = sites.dims();
  std::vector<double> dist(std::size_t(d.size()));
  for (Eigen::Index i = 0; i < d.size(); ++i) dist[std::size_t(i)] = sites[i] ? 0.0 : kInf;

  const int longest = std::max({d.w, d.h, d.l});
  std::vector<double> f, out;
  std::vector<int> v(static_cast<std::size_t>(longest));
  std::vector<double> z(std::size_t(longest) + 1);
  const std::array<Eigen::Index, 3> stride{1, d.w, Eigen::Index(d.w) * d.h};

  for (int axis = 0; axis < 3; ++axis) {
    const int n = d.axis(axis);
    f.resize(std::size_t(n));
    out.resize(std::size_t(n));
    for (Eigen::Index start = 0; start < d.size(); ++start) {
      // Visit each line once, from its first voxel along `axis`.
      if (d.coords(start)[std::size_t(axis)] != 0) continue;
      for (int t = 0; t < n; ++t) f[std::size_t(t)] = dist[std::size_t(start + t * stride[std::size_t(axis)])];
      distance_1d(f, out, spacing[std::size_t(axis)], v, z);
      for (int t = 0; t < n; ++t) dist[std::size_t(start + t * stride[std::size_t(axis)])] = out[std::size_t(t)];
    }
  }
  return dist;
}

void directed(const BitGrid& from, const std::vector<double>& to_map, std::vector<double>& pooled) {
  for (Eigen::Index i = 0; i < from.size(); ++i)
    if (from[i]) pooled.push_back(std::sqrt(to_map[std::size_t(i)]));
}

}  // namespace

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - double(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistances surface_distances(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing) {
  require_same_dims(a.dims(), b.dims(), "surface distances");
  const BitGrid sa = surface_voxels(a);
  const BitGrid sb = surface_voxels(b);
  if (popcount(sa) == 0 || popcount(sb) == 0) throw std::invalid_argument("surface distance needs two non-empty masks");

  std::vector<double> pooled;
  pooled.reserve(std::size_t(popcount(sa) + popcount(sb)));
  directed(sa, squared_distance_map(sb, spacing), pooled);
  directed(sb, squared_distance_map(sa, spacing), pooled);

  SurfaceDistances out;
  out.asd = std::accumulate(pooled.begin(), pooled.end(), 0.0) / double(pooled.size());
  out.hd95 = percentile(std::move(pooled), 95.0);
  return out;
}

MetricReport compute_metrics(const LabelVolume& pred, const LabelVolume& truth, const Spacing& spacing) {
  MetricReport r;
  r.spacing = spacing;
  r.dice = dice(pred, truth);
  r.jaccard = jaccard(pred, truth);
  const bool pred_empty = popcount(pred) == 0;
  const bool truth_empty = popcount(truth) == 0;
  if (pred_empty && truth_empty) return r;
  if (pred_empty || truth_empty) {
    const Dims& d = pred.dims();
    r.hd95 = r.asd = std::hypot(d.w * spacing[0], d.h * spacing[1], d.l * spacing[2]);
    r.flagged = true;
    return r;
  }
  const SurfaceDistances sd = surface_distances(pred, truth, spacing);
  r.hd95 = sd.hd95;
  r.asd = sd.asd;
  return r;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) throw std::invalid_argument("mean of zero reports");
  m.spacing = reports.front().spacing;
  for (const auto& r : reports) {
    m.dice += r.dice;
    m.jaccard += r.jaccard;
    m.hd95 += r.hd95;
    m.asd += r.asd;
    m.flagged = m.flagged || r.flagged;
  }
  const double n = double(reports.size());
  m.dice /= n;
  m.jaccard /= n;
  m.hd95 /= n;
  m.asd /= n;
  return m;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"dice", r.dice},       {"jaccard", r.jaccard}, {"hd95", r.hd95},
                     {"asd", r.asd},         {"spacing", r.spacing}, {"flagged", r.flagged}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r.dice = j.at("dice").get<double>();
  r.jaccard = j.at("jaccard").get<double>();
  r.hd95 = j.at("hd95").get<double>();
  r.asd = j.at("asd").get<double>();
  r.spacing = j.at("spacing").get<Spacing>();
  r.flagged = j.value("flagged", false);
}

}  // namespace dcpseg

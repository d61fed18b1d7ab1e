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

#include "dcpseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dcpseg {

std::size_t BackboneSpec::layer_offset(int layer) const {
  std::size_t off = 0;
  for (int i = 0; i < layer; ++i) off += weight_count(i) + std::size_t(channels[std::size_t(i) + 1]);
  return off;
}

void validate(const BackboneSpec& spec) {
  if (spec.channels.size() < 2) throw ConfigError("backbone needs at least one layer");
  if (spec.channels.front() != 1 || spec.channels.back() != 1)
    throw ConfigError("backbone must map one input channel to one output channel");
  for (int c : spec.channels)
    if (c < 1) throw ConfigError("channel counts must be positive");
  if (spec.kernel < 1 || spec.kernel % 2 == 0) throw ConfigError("kernel size must be odd and positive");
}

namespace {

// Zero-padded voxel layout. A grid of dims d is embedded in a (d + 2r)^3 box
// so that every kernel tap becomes a constant linear offset; a margin of the
// largest offset on both ends keeps shifted reads in range. Rows at padding
// positions are computed and then cleared, which leaves the zero padding the
// next layer reads.
struct PaddedLayout {
  Dims inner;
  Dims outer;
  int radius = 0;
  Eigen::Index margin = 0;
  Eigen::Index rows = 0;
  std::vector<Eigen::Index> tap_offset;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> interior;

  PaddedLayout(const Dims& d, int kernel) : inner(d), radius(kernel / 2) {
    outer = {d.w + 2 * radius, d.h + 2 * radius, d.l + 2 * radius};
    margin = outer.index(radius, radius, radius);
    rows = outer.size() + 2 * margin;
    for (int kz = 0; kz < kernel; ++kz)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx)
          tap_offset.push_back(Eigen::Index(kx - radius) + Eigen::Index(outer.w) * ((ky - radius) + Eigen::Index(outer.h) * (kz - radius)));
    interior = decltype(interior)::Zero(rows);
    for (int z = 0; z < d.l; ++z)
      for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) interior[row(x, y, z)] = 1;
  }

  Eigen::Index row(int x, int y, int z) const { return margin + outer.index(x + radius, y + radius, z + radius); }
};

// One column per channel, rows in the padded layout.
template <typename Scalar>
using Channels = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct ConvLayer {
  const Scalar* weights;
  const Scalar* bias;
  int in;
  int out;
  std::size_t taps;

  Scalar w(int co, int ci, std::size_t tap) const { return weights[(std::size_t(co) * in + ci) * taps + tap]; }
};

constexpr Eigen::Index kTile = 4096;

template <typename Scalar>
void clear_padding(Channels<Scalar>& m, const PaddedLayout& p) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) m.col(c).array() *= p.interior.cast<Scalar>();
}

template <typename Scalar>
Channels<Scalar> to_padded(const Grid<Scalar>& x, const PaddedLayout& p) {
  Channels<Scalar> m = Channels<Scalar>::Zero(p.rows, 1);
  const Dims& d = p.inner;
  for (int z = 0; z < d.l; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int xx = 0; xx < d.w; ++xx) m(p.row(xx, y, z), 0) = x(xx, y, z);
  return m;
}

template <typename Scalar>
Grid<Scalar> from_padded(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& col, const PaddedLayout& p) {
  Grid<Scalar> g(p.inner);
  const Dims& d = p.inner;
  for (int z = 0; z < d.l; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) g(x, y, z) = col[p.row(x, y, z)];
  return g;
}

// Output rows span [margin, rows - margin); tiles walk that range.
template <typename Fn>
void for_each_tile(const PaddedLayout& p, Fn&& fn) {
  const Eigen::Index end = p.rows - p.margin;
  for (Eigen::Index t0 = p.margin; t0 < end; t0 += kTile) fn(t0, std::min(end, t0 + kTile));
}

template <typename Scalar>
Channels<Scalar> conv_forward(const Channels<Scalar>& in, const PaddedLayout& p, const ConvLayer<Scalar>& layer) {
  Channels<Scalar> out(p.rows, layer.out);
  for (int co = 0; co < layer.out; ++co) out.col(co).setConstant(layer.bias[co]);
  for_each_tile(p, [&](Eigen::Index t0, Eigen::Index t1) {
    for (int co = 0; co < layer.out; ++co) {
      auto o_tile = out.col(co).segment(t0, t1 - t0);
      for (int ci = 0; ci < layer.in; ++ci) {
        const Scalar* src = in.col(ci).data();
        for (std::size_t tap = 0; tap < layer.taps; ++tap) {
          const Scalar wv = layer.w(co, ci, tap);
          o_tile += wv * Vec<Scalar>::Map(src + p.tap_offset[tap] + t0, t1 - t0);
        }
      }
    }
  });
  clear_padding(out, p);
  return out;
}

// Adds weight and bias gradients into `d_weights`/`d_bias`; fills `d_in`
// unless it is null. `d_out` must be zero on padding rows.
template <typename Scalar>
void conv_backward(const Channels<Scalar>& in, const Channels<Scalar>& d_out, const PaddedLayout& p,
                   const ConvLayer<Scalar>& layer, Scalar* d_weights, Scalar* d_bias, Channels<Scalar>* d_in) {
  std::vector<double> gw(std::size_t(layer.out) * layer.in * layer.taps, 0.0);
  if (d_in) d_in->setZero(p.rows, layer.in);

  for_each_tile(p, [&](Eigen::Index t0, Eigen::Index t1) {
    const Eigen::Index n = t1 - t0;
    for (int co = 0; co < layer.out; ++co) {
      const auto g = d_out.col(co).segment(t0, n);
      for (int ci = 0; ci < layer.in; ++ci) {
        const Scalar* src = in.col(ci).data();
        Scalar* di = d_in ? d_in->col(ci).data() : nullptr;
        for (std::size_t tap = 0; tap < layer.taps; ++tap) {
          const Eigen::Index off = p.tap_offset[tap];
          const auto s = Vec<Scalar>::Map(src + off + t0, n);
          gw[(std::size_t(co) * layer.in + ci) * layer.taps + tap] += double(g.dot(s));
          if (di) Vec<Scalar>::Map(di + off + t0, n) += layer.w(co, ci, tap) * g;
        }
      }
    }
  });

  for (std::size_t k = 0; k < gw.size(); ++k) d_weights[k] += Scalar(gw[k]);
  for (int co = 0; co < layer.out; ++co) d_bias[co] += Scalar(d_out.col(co).template cast<double>().sum());
  if (d_in) clear_padding(*d_in, p);
}

template <typename Scalar>
ConvLayer<Scalar> layer_view(const BackboneSpec& spec, const ParameterVector<Scalar>& params, int l) {
  const std::size_t off = spec.layer_offset(l);
  return {params.data() + off, params.data() + off + spec.weight_count(l), spec.channels[std::size_t(l)],
          spec.channels[std::size_t(l) + 1], spec.kernel_volume()};
}

template <typename Scalar>
Scalar logistic(Scalar z) {
  const Scalar lo = std::numeric_limits<Scalar>::min();
  const Scalar hi = std::nextafter(Scalar(1), Scalar(0));
  return std::clamp(Scalar(1) / (Scalar(1) + std::exp(-z)), lo, hi);
}

// Pre-activations of every layer, kept for the backward pass.
template <typename Scalar>
struct Trace {
  PaddedLayout layout;
  Channels<Scalar> input;
  std::vector<Channels<Scalar>> pre;
  Grid<Scalar> prob;
};

template <typename Scalar>
Trace<Scalar> run_forward(const BackboneSpec& spec, const ParameterVector<Scalar>& params, const Grid<Scalar>& x) {
  validate(spec);
  if (std::size_t(params.size()) != spec.param_count())
    throw ShapeError("parameter vector length " + std::to_string(params.size()) + " does not match backbone (" +
                     std::to_string(spec.param_count()) + ")");
  Trace<Scalar> t{PaddedLayout(x.dims(), spec.kernel), {}, {}, {}};
  t.input = to_padded(x, t.layout);
  const Channels<Scalar>* act = &t.input;
  Channels<Scalar> hidden;
  for (int l = 0; l < spec.layers(); ++l) {
    t.pre.push_back(conv_forward(*act, t.layout, layer_view(spec, params, l)));
    if (l + 1 < spec.layers()) {
      hidden = t.pre.back().cwiseMax(Scalar(0));
      act = &hidden;
    }
  }
  t.prob = from_padded<Scalar>(t.pre.back().col(0), t.layout);
  for (auto& v : t.prob.values()) v = logistic(v);
  return t;
}

}  // namespace

template <typename Scalar>
ParameterVector<Scalar> init_params(const BackboneSpec& spec, Rng& rng) {
  validate(spec);
  ParameterVector<Scalar> p = ParameterVector<Scalar>::Zero(Eigen::Index(spec.param_count()));
  for (int l = 0; l < spec.layers(); ++l) {
    const double fan_in = double(spec.channels[std::size_t(l)]) * double(spec.kernel_volume());
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    const std::size_t off = spec.layer_offset(l);
    for (std::size_t k = 0; k < spec.weight_count(l); ++k) p[Eigen::Index(off + k)] = Scalar(normal(rng));
  }
  return p;
}

template <typename Scalar>
Grid<Scalar> forward(const BackboneSpec& spec, const ParameterVector<Scalar>& params, const Grid<Scalar>& x) {
  return run_forward(spec, params, x).prob;
}

template <typename Scalar>
ForwardProbe<Scalar> probe_forward(const BackboneSpec& spec, const ParameterVector<Scalar>& params,
                                   const Grid<Scalar>& x) {
  Trace<Scalar> t = run_forward(spec, params, x);
  ForwardProbe<Scalar> out;
  const Dims& d = x.dims();
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l)
    for (Eigen::Index c = 0; c < t.pre[l].cols(); ++c)
      for (int z = 0; z < d.l; ++z)
        for (int y = 0; y < d.h; ++y)
          for (int xx = 0; xx < d.w; ++xx) out.active.push_back(t.pre[l](t.layout.row(xx, y, z), c) > Scalar(0));
  out.prob = std::move(t.prob);
  return out;
}

template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(const BackboneSpec& spec, const ParameterVector<Scalar>& params,
                                  std::span<const TrainingSample<Scalar>> batch, const LossConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad needs a non-empty batch");
  LossAndGrad<Scalar> out;
  out.grad = ParameterVector<Scalar>::Zero(params.size());
  ParameterVector<Scalar> sample_grad(params.size());

  for (const auto& s : batch) {
    require_same_dims(s.x.dims(), s.y.dims(), "loss_and_grad target");
    const Dims& d = s.x.dims();
    const Trace<Scalar> t = run_forward(spec, params, s.x);

    Grid<Scalar> dq;
    const SegLoss loss = weighted_seg_loss(t.prob, s.y, s.w, cfg, &dq);
    out.per_sample.push_back(loss);
    out.loss += loss.total;

    const PaddedLayout& p = t.layout;
    Channels<Scalar> delta = Channels<Scalar>::Zero(p.rows, 1);
    for (int z = 0; z < d.l; ++z)
      for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
          const Scalar q = t.prob(x, y, z);
          delta(p.row(x, y, z), 0) = dq(x, y, z) * q * (Scalar(1) - q);
        }

    sample_grad.setZero();
    Channels<Scalar> d_in, hidden;
    for (int l = spec.layers() - 1; l >= 0; --l) {
      const ConvLayer<Scalar> layer = layer_view(spec, params, l);
      Scalar* dw = sample_grad.data() + spec.layer_offset(l);
      Scalar* db = dw + spec.weight_count(l);
      if (l == 0) {
        conv_backward<Scalar>(t.input, delta, p, layer, dw, db, nullptr);
        break;
      }
      hidden = t.pre[std::size_t(l) - 1].cwiseMax(Scalar(0));
      conv_backward<Scalar>(hidden, delta, p, layer, dw, db, &d_in);
      // Rectifier subgradient is 0 at the kink.
      delta = (t.pre[std::size_t(l) - 1].array() > Scalar(0)).select(d_in, Scalar(0));
    }
    out.grad += sample_grad;
  }
  const Scalar inv = Scalar(1.0 / double(batch.size()));
  out.grad *= inv;
  out.loss /= double(batch.size());
  if (!std::isfinite(out.loss) || !out.grad.allFinite()) throw NumericError("loss or gradient is not finite");
  return out;
}

template ParameterVector<float> init_params<float>(const BackboneSpec&, Rng&);
template ParameterVector<double> init_params<double>(const BackboneSpec&, Rng&);
template Grid<float> forward<float>(const BackboneSpec&, const ParameterVector<float>&, const Grid<float>&);
template Grid<double> forward<double>(const BackboneSpec&, const ParameterVector<double>&, const Grid<double>&);
template ForwardProbe<float> probe_forward<float>(const BackboneSpec&, const ParameterVector<float>&,
                                                  const Grid<float>&);
template ForwardProbe<double> probe_forward<double>(const BackboneSpec&, const ParameterVector<double>&,
                                                    const Grid<double>&);
template LossAndGrad<float> loss_and_grad<float>(const BackboneSpec&, const ParameterVector<float>&,
                                                 std::span<const TrainingSample<float>>, const LossConfig&);
template LossAndGrad<double> loss_and_grad<double>(const BackboneSpec&, const ParameterVector<double>&,
                                                   std::span<const TrainingSample<double>>, const LossConfig&);

}  // namespace dcpseg

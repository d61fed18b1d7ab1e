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

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "dcpseg/loss_metrics.hpp"
#include "dcpseg/masks.hpp"
#include "dcpseg/tensor.hpp"

namespace dcpseg {

/// Same-padded 3D conv stack: rectifier after every hidden layer, logistic
/// output. channels = {1, c1, ..., 1}.
struct BackboneSpec {
  std::vector<int> channels{1, 8, 8, 1};
  int kernel = 3;

  int layers() const { return int(channels.size()) - 1; }
  std::size_t kernel_volume() const { return std::size_t(kernel) * kernel * kernel; }
  std::size_t weight_count(int layer) const {
    return std::size_t(channels[std::size_t(layer)]) * std::size_t(channels[std::size_t(layer) + 1]) * kernel_volume();
  }
  /// Offset of the layer's weights in the flat vector; its biases follow them.
  std::size_t layer_offset(int layer) const;
  std::size_t param_count() const { return layer_offset(layers()); }

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

void validate(const BackboneSpec& spec);

/// Flat weights, layer-major; within a layer [out][in][kz][ky][kx] then biases.
template <typename Scalar>
using ParameterVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct SgdHyper {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

template <typename Scalar>
struct OptState {
  ParameterVector<Scalar> buffer;
  SgdHyper hyper;

  static OptState zeros(Eigen::Index n, const SgdHyper& hyper) { return {ParameterVector<Scalar>::Zero(n), hyper}; }
};

/// Kaiming-normal weights (std sqrt(2 / fan_in)), zero biases.
template <typename Scalar>
ParameterVector<Scalar> init_params(const BackboneSpec& spec, Rng& rng);

template <typename Scalar>
Grid<Scalar> forward(const BackboneSpec& spec, const ParameterVector<Scalar>& params, const Grid<Scalar>& x);

/// Output plus the on/off state of every hidden rectifier (layer, channel, voxel
/// order). Two parameter vectors with equal patterns lie on the same smooth piece
/// of the loss surface.
template <typename Scalar>
struct ForwardProbe {
  Grid<Scalar> prob;
  std::vector<bool> active;
};

template <typename Scalar>
ForwardProbe<Scalar> probe_forward(const BackboneSpec& spec, const ParameterVector<Scalar>& params,
                                   const Grid<Scalar>& x);

template <typename Scalar>
struct TrainingSample {
  const Grid<Scalar>& x;
  const LabelVolume& y;
  const Grid<Scalar>& w;
};

template <typename Scalar>
struct LossAndGrad {
  /// Mean of per-sample losses.
  double loss = 0.0;
  std::vector<SegLoss> per_sample;
  ParameterVector<Scalar> grad;
};

/// Mean weighted segmentation loss over `batch` and its exact gradient.
/// Throws NumericError on a non-finite loss.
template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(const BackboneSpec& spec, const ParameterVector<Scalar>& params,
                                  std::span<const TrainingSample<Scalar>> batch, const LossConfig& cfg);

template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(const BackboneSpec& spec, const ParameterVector<Scalar>& params,
                                  const Grid<Scalar>& x, const LabelVolume& y, const Grid<Scalar>& w,
                                  const LossConfig& cfg) {
  const TrainingSample<Scalar> one{x, y, w};
  return loss_and_grad<Scalar>(spec, params, std::span<const TrainingSample<Scalar>>(&one, 1), cfg);
}

/// Momentum SGD with coupled weight decay:
///   buffer = momentum * buffer + grad + weight_decay * params
///   params -= lr * buffer
template <typename Scalar>
void sgd_step(ParameterVector<Scalar>& params, const ParameterVector<Scalar>& grad, OptState<Scalar>& opt) {
  if (params.size() != grad.size() || params.size() != opt.buffer.size())
    throw ShapeError("sgd_step: parameter, gradient and buffer lengths differ");
  const auto& h = opt.hyper;
  opt.buffer = Scalar(h.momentum) * opt.buffer + grad + Scalar(h.weight_decay) * params;
  params -= Scalar(h.lr) * opt.buffer;
}

/// lambda * teacher + (1 - lambda) * student.
template <typename Scalar>
ParameterVector<Scalar> ema_update(const ParameterVector<Scalar>& teacher, const ParameterVector<Scalar>& student,
                                   double lambda) {
  if (teacher.size() != student.size()) throw ShapeError("ema_update: teacher and student lengths differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("ema decay must lie in [0,1]");
  return Scalar(lambda) * teacher + Scalar(1.0 - lambda) * student;
}

}  // namespace dcpseg

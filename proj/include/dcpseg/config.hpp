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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "dcpseg/loss_metrics.hpp"
#include "dcpseg/masks.hpp"
#include "dcpseg/model.hpp"
#include "dcpseg/sse.hpp"

namespace dcpseg {

/// Which teacher-update path each step takes.
///   random            A with probability path_prob_a
///   forced_alternate  A, B, A, B, ...
///   single_a/single_b one path only (single-teacher ablation)
enum class PathMode { random, forced_alternate, single_a, single_b };

/// Which copy-paste stages run. Disabled stages use an all-ones mask.
enum class DcpMode { full, step1_only, step2_only, none };

enum class EvalModel { student, teacher1, teacher2 };

struct TrainConfig {
  double alpha = 0.5;
  double lambda_ema = 0.99;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double ratio_step1 = 1.0 / 3.0;
  double ratio_step2 = 2.0 / 3.0;
  double sse_threshold = 0.01;
  double path_prob_a = 0.5;
  int pretrain_iters = 100;
  int train_iters = 500;
  int batch_pairs = 1;
  std::uint64_t seed = 0;
  EnsembleMode ensemble_mode = EnsembleMode::sse;
  PathMode path_mode = PathMode::random;
  DcpMode dcp_mode = DcpMode::full;

  Placement mask_placement = Placement::random_uniform;
  Connectivity connectivity = Connectivity::twenty_six;
  double smooth_beta = 0.9;
  double dice_eps = 1e-5;
  double ce_clamp = 1e-7;
  double w_dice = 0.5;
  double w_ce = 0.5;
  BackboneSpec backbone;
  int checkpoint_interval = 0;
  /// Re-derive the loss mask from tagged composites every N steps; 0 disables.
  int debug_check_interval = 0;
  EvalModel eval_model = EvalModel::student;

  LossConfig loss() const { return {alpha, dice_eps, ce_clamp, w_dice, w_ce}; }
  SseConfig sse() const { return {sse_threshold, smooth_beta, connectivity}; }
  SgdHyper sgd() const { return {lr, momentum, weight_decay}; }
};

void validate(const TrainConfig& cfg);

/// Ordered key/value view; the keys are exactly the accepted config keys.
std::map<std::string, std::string> to_key_values(const TrainConfig& cfg);

/// Applies one key. Throws ConfigError naming the key when it is unknown or
/// its value does not parse.
void set_key(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Flat "key = value" text, '#' starts a comment. Unknown keys are rejected.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string format_config(const TrainConfig& cfg);

/// Stable 64-bit hex digest of the canonical config text.
std::string fingerprint(const TrainConfig& cfg);

const char* to_string(EnsembleMode m);
const char* to_string(PathMode m);
const char* to_string(DcpMode m);
const char* to_string(EvalModel m);

}  // namespace dcpseg

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

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dcpseg/config.hpp"
#include "dcpseg/data.hpp"
#include "dcpseg/dcp.hpp"
#include "dcpseg/model.hpp"

namespace dcpseg {

using Params = ParameterVector<float>;

struct TrainState {
  int iteration = 0;
  Params student;
  Params teacher1;
  Params teacher2;
  OptState<float> opt;
  Rng rng;
  /// Smoothed dissimilarity of the two teachers on the a- and b-slot unlabeled volumes.
  std::optional<double> smoothed_dissim_a;
  std::optional<double> smoothed_dissim_b;
};

/// Teachers start as exact copies of the pretrained student; fresh momentum buffer.
TrainState init_state(const TrainConfig& cfg, const Params& pretrained, Rng rng);

/// Two labeled volumes with ground truth and two unlabeled volumes.
struct Quadruple {
  const Volume& la;
  const LabelVolume& y_a;
  const Volume& lb;
  const LabelVolume& y_b;
  const Volume& ua;
  const Volume& ub;
};

Quadruple sample_quadruple(const LoadedDataset& ds, Rng& rng);

/// One row of the training log.
struct StepRecord {
  int iter = 0;
  Path path = Path::A;
  double loss_total = 0.0;
  double loss_in1 = 0.0;
  double loss_in2 = 0.0;
  double dissim_a = 0.0;
  double dissim_b = 0.0;
  Regime regime_a = Regime::easy;
  Regime regime_b = Regime::easy;
  int teacher_updated = 1;
};

/// Path chosen for the given step; consumes one draw only in random mode.
Path choose_path(const TrainConfig& cfg, int iteration, Rng& rng);

/// Inner (step one) and outer (step two) masks after applying dcp_mode.
/// Always consumes the same draws, so modes can be compared on identical streams.
std::pair<BinaryMask, BinaryMask> draw_masks(const TrainConfig& cfg, const Dims& dims, Rng& rng);

/// Pseudo-label for one unlabeled volume: ensemble fusion then largest component.
std::pair<LabelVolume, SseDecision> pseudo_label(const ProbVolume& r1, const ProbVolume& r2, const TrainConfig& cfg);

/// One dual-teacher iteration over `batch`: path, masks, teacher inference,
/// pseudo-labels, copy-paste of images and labels, masked student loss, SGD on
/// the student, then EMA into the path's teacher.
/// Throws NumericError on a non-finite loss.
StepRecord train_step(TrainState& state, const TrainConfig& cfg, std::span<const Quadruple> batch);

/// Copy-paste pretraining on labeled data. Returns `init` unchanged when
/// pretrain_iters is 0. `loss_log`, when given, receives each iteration's loss.
Params pretrain(const TrainConfig& cfg, const Params& init, std::span<const Volume> labeled,
                std::span<const LabelVolume> truth, Rng& rng, std::vector<double>* loss_log = nullptr);

struct EvalResult {
  std::vector<MetricReport> per_volume;
  MetricReport mean;
};

/// Threshold at 0.5 (strict), keep the largest component, score against truth.
EvalResult evaluate(const BackboneSpec& spec, const Params& params, std::span<const Volume> volumes,
                    std::span<const LabelVolume> truth, const Spacing& spacing,
                    Connectivity connectivity = Connectivity::twenty_six);

nlohmann::json to_json(const EvalResult& r);

// ---- Checkpoints ----------------------------------------------------------------
//
// "DCPCKPT1\n", one JSON header line, then four float32 little-endian vectors
// of param_count entries each: student, teacher1, teacher2, momentum buffer.

void write_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg);

struct Checkpoint {
  TrainState state;
  TrainConfig config;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

// ---- Training log ---------------------------------------------------------------

/// CSV log. Header lines start with '#': one "started=" timestamp line, then
/// every config key. The column row follows.
class TrainingLog {
 public:
  TrainingLog(std::ostream& out, const TrainConfig& cfg, const std::string& started);
  void append(const StepRecord& r);

  static const char* columns();

 private:
  std::ostream& out_;
};

// ---- Whole pipeline ----------------------------------------------------------------

struct RunOptions {
  /// When set, checkpoints, train_log.csv and eval.json go here.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every main-loop step.
  std::function<void(const StepRecord&, const TrainState&)> on_step;
};

struct RunResult {
  Params pretrained;
  EvalResult baseline;
  TrainState state;
  EvalResult final_eval;
  std::vector<StepRecord> log;
};

/// init -> pretrain -> dual-teacher loop -> evaluate on the test split. A pure
/// function of (cfg, dataset).
RunResult run_pipeline(const TrainConfig& cfg, const LoadedDataset& ds, const RunOptions& options = {});

const Params& eval_params(const TrainState& s, EvalModel which);

/// Worker count for independent inference calls: DCP_THREADS if set, else hardware concurrency.
unsigned worker_threads();

}  // namespace dcpseg

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
#include <string>
#include <vector>

#include <json.hpp>

#include "dcpseg/data.hpp"
#include "dcpseg/trainer.hpp"

namespace dcpseg {

/// One row of the cross-run comparison.
struct RunRow {
  std::string run;
  std::string fingerprint;
  /// False when the run directory has no readable eval.json.
  bool complete = false;
  double dice = 0.0;
  double jaccard = 0.0;
  double hd95 = 0.0;
  double asd = 0.0;

  friend bool operator==(const RunRow&, const RunRow&) = default;
};

RunRow read_run(const std::filesystem::path& run_dir);

/// Complete rows by Dice descending (ties keep input order), then incomplete rows.
std::vector<RunRow> build_report(const std::vector<std::filesystem::path>& run_dirs);

std::string format_table(const std::vector<RunRow>& rows);
std::string to_csv(const std::vector<RunRow>& rows);
/// Inverse of to_csv.
std::vector<RunRow> parse_csv(const std::string& text);

/// Numeric stand-in for comparing what the two teachers see.
struct DiversityReport {
  /// Total-variation distance between Path A and Path B intensity histograms,
  /// per student input stream, over `samples` quadruples with shared masks.
  double hist_distance_in1 = 0.0;
  double hist_distance_in2 = 0.0;
  double hist_distance = 0.0;
  double teacher_l2 = 0.0;
  double teacher_linf = 0.0;
  int samples = 0;
  int bins = 0;
  std::string dcp_mode;
};

/// Deterministic given the checkpoint's config seed and the dataset.
DiversityReport diversity_report(const Checkpoint& ck, const LoadedDataset& ds, int samples = 32, int bins = 64);

/// Total-variation distance between two equal-length count histograms.
double histogram_distance(const std::vector<double>& p, const std::vector<double>& q);

nlohmann::ordered_json to_json(const DiversityReport& r);

}  // namespace dcpseg

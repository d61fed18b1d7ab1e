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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcpseg/loss_metrics.hpp"
#include "dcpseg/masks.hpp"
#include "dcpseg/tensor.hpp"

namespace dcpseg {

/// Synthetic phantom parameters. The label is a union of perturbed
/// ellipsoids clustered around one centre; the image is a two-level
/// intensity map plus white Gaussian noise.
struct PhantomSpec {
  Dims dims{32, 32, 32};
  int min_blobs = 1;
  int max_blobs = 3;
  double min_radius = 3.0;
  double max_radius = 8.0;
  double fg_mean = 1.0;
  double bg_mean = 0.0;
  double noise_sigma = 0.9;
  /// Relative amplitude of the angular boundary perturbation.
  double smoothness = 0.25;
  double min_fg_fraction = 0.02;
  double max_fg_fraction = 0.25;
  Spacing spacing{1.0, 1.0, 1.0};
  int max_retries = 100;
};

void validate(const PhantomSpec& spec);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// Draws one image/label pair. Throws std::runtime_error when no draw within
/// `max_retries` lands in the foreground fraction range.
std::pair<Volume, LabelVolume> gen_phantom(const PhantomSpec& spec, Rng& rng);

// ---- SVOL1 on-disk format -------------------------------------------------
//
// One UTF-8 JSON header line
//   {"magic":"SVOL1","dims":[w,h,l],"dtype":"f32"|"u8","order":"x-fastest","spacing":[sx,sy,sz]}
// terminated by '\n', followed by w*h*l little-endian voxels.

void write_volume(const std::filesystem::path& path, const Volume& v, const Spacing& spacing = {1, 1, 1});
void write_labels(const std::filesystem::path& path, const LabelVolume& v, const Spacing& spacing = {1, 1, 1});
Volume read_volume(const std::filesystem::path& path, Spacing* spacing = nullptr);
LabelVolume read_labels(const std::filesystem::path& path, Spacing* spacing = nullptr);

// ---- Splits and manifests ---------------------------------------------------

enum class Split { labeled_train, unlabeled_train, val, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string volume;
  /// Absent for unlabeled-train entries.
  std::optional<std::string> label;
  Split split = Split::labeled_train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  PhantomSpec phantom;
  int labeled_count = 0;
  int unlabeled_count = 0;

  int count(Split s) const;
  /// The semi-supervised regime: fewer labeled than unlabeled training volumes.
  bool semi_supervised() const { return labeled_count < unlabeled_count; }
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Assigns phantom indices [0, n_total) to splits. File names are
/// "vol_NNNN.svol" / "lab_NNNN.svol" relative to the manifest.
DatasetManifest make_splits(int n_total, double labeled_fraction, int val_count, int test_count, Rng& rng);

struct DatasetRequest {
  PhantomSpec phantom;
  int n_total = 54;
  double labeled_fraction = 0.05;
  int val_count = 4;
  int test_count = 10;
};

void to_json(nlohmann::json& j, const DatasetRequest& r);
/// Unknown keys are rejected with ConfigError.
void from_json(const nlohmann::json& j, DatasetRequest& r);

/// Split assignment and every phantom, fully determined by `seed`.
struct GeneratedDataset {
  DatasetManifest manifest;
  std::vector<Volume> volumes;
  std::vector<LabelVolume> labels;
};

GeneratedDataset generate_dataset(const DatasetRequest& request, std::uint64_t seed);

/// Writes every file plus manifest.json into an existing directory.
void write_dataset(const GeneratedDataset& data, const std::filesystem::path& dir);

/// Volumes grouped by split. Unlabeled-train entries carry no labels.
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Volume> labeled;
  std::vector<LabelVolume> labeled_truth;
  std::vector<Volume> unlabeled;
  std::vector<Volume> val;
  std::vector<LabelVolume> val_truth;
  std::vector<Volume> test;
  std::vector<LabelVolume> test_truth;
};

LoadedDataset load_dataset(const std::filesystem::path& manifest_path);
/// Same grouping straight from memory, without touching disk.
LoadedDataset group_dataset(const GeneratedDataset& data);

}  // namespace dcpseg

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

#include "dcpseg/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <set>

namespace dcpseg {

void validate(const PhantomSpec& s) {
  validate(s.dims);
  if (s.min_blobs < 1 || s.max_blobs < s.min_blobs) throw ConfigError("blob count range is invalid");
  if (!(s.min_radius > 0.0 && s.max_radius >= s.min_radius)) throw ConfigError("blob radius range is invalid");
  if (!(s.fg_mean > s.bg_mean)) throw ConfigError("fg_mean must exceed bg_mean");
  if (!(s.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!(s.smoothness >= 0.0 && s.smoothness < 1.0)) throw ConfigError("smoothness must lie in [0,1)");
  if (!(s.min_fg_fraction > 0.0 && s.min_fg_fraction < s.max_fg_fraction && s.max_fg_fraction < 1.0))
    throw ConfigError("foreground fraction range must satisfy 0 < lo < hi < 1");
  for (double sp : s.spacing)
    if (!(sp > 0.0)) throw ConfigError("spacing must be positive");
  if (s.max_retries < 1) throw ConfigError("max_retries must be positive");
}

namespace {

const std::set<std::string> kPhantomKeys = {"dims",       "min_blobs",   "max_blobs",       "min_radius",
                                            "max_radius", "fg_mean",     "bg_mean",         "noise_sigma",
                                            "smoothness", "min_fg_fraction", "max_fg_fraction", "spacing",
                                            "max_retries"};

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(std::string("unknown key in ") + where + ": " + key);
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("bad value for key: ") + key);
  }
}

}  // namespace

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = nlohmann::json{{"dims", {s.dims.w, s.dims.h, s.dims.l}},
                     {"min_blobs", s.min_blobs},
                     {"max_blobs", s.max_blobs},
                     {"min_radius", s.min_radius},
                     {"max_radius", s.max_radius},
                     {"fg_mean", s.fg_mean},
                     {"bg_mean", s.bg_mean},
                     {"noise_sigma", s.noise_sigma},
                     {"smoothness", s.smoothness},
                     {"min_fg_fraction", s.min_fg_fraction},
                     {"max_fg_fraction", s.max_fg_fraction},
                     {"spacing", s.spacing},
                     {"max_retries", s.max_retries}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  reject_unknown(j, kPhantomKeys, "phantom spec");
  if (j.contains("dims")) {
    std::array<int, 3> d{};
    read_opt(j, "dims", d);
    s.dims = {d[0], d[1], d[2]};
  }
  read_opt(j, "min_blobs", s.min_blobs);
  read_opt(j, "max_blobs", s.max_blobs);
  read_opt(j, "min_radius", s.min_radius);
  read_opt(j, "max_radius", s.max_radius);
  read_opt(j, "fg_mean", s.fg_mean);
  read_opt(j, "bg_mean", s.bg_mean);
  read_opt(j, "noise_sigma", s.noise_sigma);
  read_opt(j, "smoothness", s.smoothness);
  read_opt(j, "min_fg_fraction", s.min_fg_fraction);
  read_opt(j, "max_fg_fraction", s.max_fg_fraction);
  read_opt(j, "spacing", s.spacing);
  read_opt(j, "max_retries", s.max_retries);
}

namespace {

struct Blob {
  std::array<double, 3> centre;
  std::array<double, 3> radius;
  std::array<double, 3> freq;
  std::array<double, 3> phase;
};

LabelVolume draw_label(const PhantomSpec& s, Rng& rng) {
  std::array<double, 3> main_centre{};
  for (int a = 0; a < 3; ++a) {
    const double len = s.dims.axis(a);
    const double lo = std::min(s.max_radius, (len - 1) / 2.0);
    std::uniform_real_distribution<double> u(lo, std::max(lo, len - 1 - lo));
    main_centre[std::size_t(a)] = u(rng);
  }
  std::uniform_int_distribution<int> n_blobs(s.min_blobs, s.max_blobs);
  std::uniform_real_distribution<double> radius(s.min_radius, s.max_radius);
  std::uniform_real_distribution<double> jitter(-0.6 * s.max_radius, 0.6 * s.max_radius);
  std::uniform_int_distribution<int> freq(1, 3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  std::vector<Blob> blobs(std::size_t(n_blobs(rng)));
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    for (std::size_t a = 0; a < 3; ++a) {
      blobs[b].centre[a] = main_centre[a] + (b == 0 ? 0.0 : jitter(rng));
      blobs[b].radius[a] = radius(rng);
      blobs[b].freq[a] = freq(rng);
      blobs[b].phase[a] = phase(rng);
    }
  }

  LabelVolume label(s.dims, 0);
  for (int z = 0; z < s.dims.l; ++z)
    for (int y = 0; y < s.dims.h; ++y)
      for (int x = 0; x < s.dims.w; ++x) {
        const std::array<double, 3> p{double(x), double(y), double(z)};
        for (const Blob& b : blobs) {
          std::array<double, 3> u{};
          double e2 = 0.0;
          for (std::size_t a = 0; a < 3; ++a) {
            u[a] = (p[a] - b.centre[a]) / b.radius[a];
            e2 += u[a] * u[a];
          }
          const double e = std::sqrt(e2);
          double wobble = 0.0;
          if (e > 0.0)
            for (std::size_t a = 0; a < 3; ++a) wobble += std::sin(b.freq[a] * std::numbers::pi * u[a] / e + b.phase[a]);
          if (e < 1.0 + s.smoothness * wobble / 3.0) {
            label(x, y, z) = 1;
            break;
          }
        }
      }
  return label;
}

}  // namespace

std::pair<Volume, LabelVolume> gen_phantom(const PhantomSpec& spec, Rng& rng) {
  validate(spec);
  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    LabelVolume label = draw_label(spec, rng);
    const double frac = double(popcount(label)) / double(label.size());
    if (frac < spec.min_fg_fraction || frac > spec.max_fg_fraction) continue;

    Volume image(spec.dims);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (Eigen::Index i = 0; i < image.size(); ++i) {
      const double base = label[i] ? spec.fg_mean : spec.bg_mean;
      image[i] = float(spec.noise_sigma > 0.0 ? base + spec.noise_sigma * noise(rng) : base);
    }
    return {std::move(image), std::move(label)};
  }
  throw std::runtime_error("phantom foreground fraction range unreachable after " + std::to_string(spec.max_retries) +
                           " attempts");
}

// ---- SVOL1 ------------------------------------------------------------------

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 1 ? "u8" : "f32";
}

template <typename T>
void write_grid(const std::filesystem::path& path, const Grid<T>& g, const Spacing& spacing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot open for writing: " + path.string());
  nlohmann::ordered_json header;
  header["magic"] = "SVOL1";
  header["dims"] = {g.dims().w, g.dims().h, g.dims().l};
  header["dtype"] = dtype_name<T>();
  header["order"] = "x-fastest";
  header["spacing"] = spacing;
  out << header.dump() << '\n';
  for (T v : g.values()) {
    const T le = to_little(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(T));
  }
  if (!out) throw IoError(IoErrorKind::write_failed, "write failed: " + path.string());
}

template <typename T>
Grid<T> read_grid(const std::filesystem::path& path, Spacing* spacing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("{", 0) != 0 || line.find("\"SVOL1\"") == std::string::npos)
    throw IoError(IoErrorKind::bad_magic, "not an SVOL1 file: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw IoError(IoErrorKind::bad_header, "malformed SVOL1 header: " + path.string());
  }
  if (header.value("magic", "") != "SVOL1") throw IoError(IoErrorKind::bad_magic, "bad magic: " + path.string());

  Dims dims;
  std::string dtype;
  try {
    const auto d = header.at("dims").get<std::array<int, 3>>();
    dims = {d[0], d[1], d[2]};
    dtype = header.at("dtype").get<std::string>();
    if (header.at("order").get<std::string>() != "x-fastest") throw std::runtime_error("order");
    if (spacing) *spacing = header.at("spacing").get<Spacing>();
    validate(dims);
  } catch (const std::exception&) {
    throw IoError(IoErrorKind::bad_header, "incomplete SVOL1 header: " + path.string());
  }
  if (dtype != dtype_name<T>())
    throw IoError(IoErrorKind::dtype_mismatch,
                  "expected dtype " + std::string(dtype_name<T>()) + " but file holds " + dtype + ": " + path.string());

  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto expected = std::size_t(dims.size()) * sizeof(T);
  if (payload.size() < expected)
    throw IoError(IoErrorKind::truncated, "truncated payload (" + std::to_string(payload.size()) + " of " +
                                              std::to_string(expected) + " bytes): " + path.string());
  if (payload.size() > expected) throw IoError(IoErrorKind::bad_header, "trailing bytes after payload: " + path.string());

  Grid<T> g(dims);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    T v;
    std::memcpy(&v, payload.data() + std::size_t(i) * sizeof(T), sizeof(T));
    g[i] = to_little(v);
  }
  return g;
}

}  // namespace

void write_volume(const std::filesystem::path& path, const Volume& v, const Spacing& spacing) {
  write_grid(path, v, spacing);
}
void write_labels(const std::filesystem::path& path, const LabelVolume& v, const Spacing& spacing) {
  write_grid(path, v, spacing);
}
Volume read_volume(const std::filesystem::path& path, Spacing* spacing) { return read_grid<float>(path, spacing); }
LabelVolume read_labels(const std::filesystem::path& path, Spacing* spacing) {
  return read_grid<std::uint8_t>(path, spacing);
}

// ---- Splits and manifests -----------------------------------------------------

const char* to_string(Split s) {
  switch (s) {
    case Split::labeled_train:
      return "labeled-train";
    case Split::unlabeled_train:
      return "unlabeled-train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  for (Split v : {Split::labeled_train, Split::unlabeled_train, Split::val, Split::test})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown split: " + s);
}

int DatasetManifest::count(Split s) const {
  return int(std::count_if(entries.begin(), entries.end(), [s](const ManifestEntry& e) { return e.split == s; }));
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je{{"volume", e.volume}, {"split", to_string(e.split)}};
    je["label"] = e.label ? nlohmann::json(*e.label) : nlohmann::json(nullptr);
    entries.push_back(je);
  }
  j = nlohmann::json{{"entries", entries},
                     {"seed", m.seed},
                     {"phantom_spec", m.phantom},
                     {"counts", {{"labeled", m.labeled_count}, {"unlabeled", m.unlabeled_count}}}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m = DatasetManifest{};
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.volume = je.at("volume").get<std::string>();
    if (je.contains("label") && !je.at("label").is_null()) e.label = je.at("label").get<std::string>();
    e.split = split_from_string(je.at("split").get<std::string>());
    m.entries.push_back(e);
  }
  m.seed = j.at("seed").get<std::uint64_t>();
  m.phantom = j.at("phantom_spec").get<PhantomSpec>();
  m.labeled_count = j.at("counts").at("labeled").get<int>();
  m.unlabeled_count = j.at("counts").at("unlabeled").get<int>();
}

namespace {

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d.svol", prefix, i);
  return buf;
}

}  // namespace

DatasetManifest make_splits(int n_total, double labeled_fraction, int val_count, int test_count, Rng& rng) {
  if (n_total < 1 || val_count < 0 || test_count < 0) throw ConfigError("split counts must be non-negative");
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0)) throw ConfigError("labeled_fraction must lie in [0,1]");
  const int train = n_total - val_count - test_count;
  if (train < 1) throw ConfigError("no training volumes left after val/test split");

  std::vector<int> order(static_cast<std::size_t>(n_total));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const int labeled = int(std::lround(labeled_fraction * train));
  std::vector<Split> assign(static_cast<std::size_t>(n_total));
  for (int k = 0; k < n_total; ++k) {
    Split s = Split::unlabeled_train;
    if (k < val_count)
      s = Split::val;
    else if (k < val_count + test_count)
      s = Split::test;
    else if (k < val_count + test_count + labeled)
      s = Split::labeled_train;
    assign[std::size_t(order[std::size_t(k)])] = s;
  }

  DatasetManifest m;
  for (int i = 0; i < n_total; ++i) {
    ManifestEntry e;
    e.volume = numbered("vol", i);
    e.split = assign[std::size_t(i)];
    if (e.split != Split::unlabeled_train) e.label = numbered("lab", i);
    m.entries.push_back(e);
  }
  m.labeled_count = labeled;
  m.unlabeled_count = train - labeled;
  return m;
}

void to_json(nlohmann::json& j, const DatasetRequest& r) {
  j = nlohmann::json{{"phantom", r.phantom},
                     {"n_total", r.n_total},
                     {"labeled_fraction", r.labeled_fraction},
                     {"val_count", r.val_count},
                     {"test_count", r.test_count}};
}

void from_json(const nlohmann::json& j, DatasetRequest& r) {
  reject_unknown(j, {"phantom", "n_total", "labeled_fraction", "val_count", "test_count"}, "dataset spec");
  if (j.contains("phantom")) r.phantom = j.at("phantom").get<PhantomSpec>();
  read_opt(j, "n_total", r.n_total);
  read_opt(j, "labeled_fraction", r.labeled_fraction);
  read_opt(j, "val_count", r.val_count);
  read_opt(j, "test_count", r.test_count);
}

GeneratedDataset generate_dataset(const DatasetRequest& request, std::uint64_t seed) {
  validate(request.phantom);
  Rng rng(seed);
  GeneratedDataset out;
  out.manifest = make_splits(request.n_total, request.labeled_fraction, request.val_count, request.test_count, rng);
  out.manifest.seed = seed;
  out.manifest.phantom = request.phantom;
  for (int i = 0; i < request.n_total; ++i) {
    auto [image, label] = gen_phantom(request.phantom, rng);
    out.volumes.push_back(std::move(image));
    out.labels.push_back(std::move(label));
  }
  return out;
}

void write_dataset(const GeneratedDataset& data, const std::filesystem::path& dir) {
  const Spacing& sp = data.manifest.phantom.spacing;
  for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
    const ManifestEntry& e = data.manifest.entries[i];
    write_volume(dir / e.volume, data.volumes[i], sp);
    if (e.label) write_labels(dir / *e.label, data.labels[i], sp);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write manifest in " + dir.string());
  out << nlohmann::json(data.manifest).dump(2) << '\n';
  if (!out) throw IoError(IoErrorKind::write_failed, "manifest write failed in " + dir.string());
}

namespace {

void place(LoadedDataset& ds, Split split, Volume v, std::optional<LabelVolume> y) {
  switch (split) {
    case Split::labeled_train:
      ds.labeled.push_back(std::move(v));
      ds.labeled_truth.push_back(std::move(*y));
      break;
    case Split::unlabeled_train:
      ds.unlabeled.push_back(std::move(v));
      break;
    case Split::val:
      ds.val.push_back(std::move(v));
      ds.val_truth.push_back(std::move(*y));
      break;
    case Split::test:
      ds.test.push_back(std::move(v));
      ds.test_truth.push_back(std::move(*y));
      break;
  }
}

}  // namespace

LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open manifest: " + manifest_path.string());
  LoadedDataset ds;
  try {
    ds.manifest = nlohmann::json::parse(in).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::bad_header, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto dir = manifest_path.parent_path();
  for (const ManifestEntry& e : ds.manifest.entries) {
    Volume v = read_volume(dir / e.volume);
    if (!(v.dims() == ds.manifest.phantom.dims))
      throw ShapeError("volume " + e.volume + " does not match manifest dims " + to_string(ds.manifest.phantom.dims));
    std::optional<LabelVolume> y;
    if (e.split != Split::unlabeled_train) {
      if (!e.label) throw IoError(IoErrorKind::bad_header, "entry " + e.volume + " needs a label path");
      y = read_labels(dir / *e.label);
      require_same_dims(v.dims(), y->dims(), "label file");
    }
    place(ds, e.split, std::move(v), std::move(y));
  }
  return ds;
}

LoadedDataset group_dataset(const GeneratedDataset& data) {
  LoadedDataset ds;
  ds.manifest = data.manifest;
  for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
    const Split s = data.manifest.entries[i].split;
    std::optional<LabelVolume> y;
    if (s != Split::unlabeled_train) y = data.labels[i];
    place(ds, s, data.volumes[i], std::move(y));
  }
  return ds;
}

}  // namespace dcpseg

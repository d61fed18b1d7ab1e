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

#include "dcpseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dcpseg/errors.hpp"

namespace dcpseg {

RunRow read_run(const std::filesystem::path& run_dir) {
  RunRow row;
  row.run = run_dir.string();
  std::ifstream in(run_dir / "eval.json");
  if (!in) return row;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto& mean = j.at("final").at("mean");
    row.fingerprint = j.at("fingerprint").get<std::string>();
    row.dice = mean.at("dice").get<double>();
    row.jaccard = mean.at("jaccard").get<double>();
    row.hd95 = mean.at("hd95").get<double>();
    row.asd = mean.at("asd").get<double>();
    row.complete = true;
  } catch (const nlohmann::json::exception&) {
    row = RunRow{};
    row.run = run_dir.string();
  }
  return row;
}

std::vector<RunRow> build_report(const std::vector<std::filesystem::path>& run_dirs) {
  std::vector<RunRow> rows;
  for (const auto& d : run_dirs) rows.push_back(read_run(d));
  std::stable_sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    if (a.complete != b.complete) return a.complete;
    return a.complete && a.dice > b.dice;
  });
  return rows;
}

std::string format_table(const std::vector<RunRow>& rows) {
  std::size_t width = 3;
  for (const auto& r : rows) width = std::max(width, r.run.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %-16s  %8s  %8s  %8s  %8s\n", int(width), "run", "fingerprint", "dice",
                "jaccard", "hd95", "asd");
  out << buf;
  for (const auto& r : rows) {
    if (r.complete)
      std::snprintf(buf, sizeof(buf), "%-*s  %-16s  %8.2f  %8.2f  %8.3f  %8.3f\n", int(width), r.run.c_str(),
                    r.fingerprint.c_str(), 100.0 * r.dice, 100.0 * r.jaccard, r.hd95, r.asd);
    else
      std::snprintf(buf, sizeof(buf), "%-*s  %-16s  %8s  %8s  %8s  %8s\n", int(width), r.run.c_str(), "incomplete",
                    "-", "-", "-", "-");
    out << buf;
  }
  return out.str();
}

namespace {

constexpr const char* kCsvHeader = "run,fingerprint,status,dice,jaccard,hd95,asd";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string to_csv(const std::vector<RunRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.run) + "," + r.fingerprint + "," + (r.complete ? "complete" : "incomplete");
    if (r.complete)
      out += "," + exact(r.dice) + "," + exact(r.jaccard) + "," + exact(r.hd95) + "," + exact(r.asd);
    else
      out += ",,,,";
    out += "\n";
  }
  return out;
}

std::vector<RunRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::invalid_argument("report CSV: unexpected header");
  std::vector<RunRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw std::invalid_argument("report CSV: expected 7 fields");
    RunRow r;
    r.run = f[0];
    r.fingerprint = f[1];
    r.complete = f[2] == "complete";
    if (r.complete) {
      r.dice = std::stod(f[3]);
      r.jaccard = std::stod(f[4]);
      r.hd95 = std::stod(f[5]);
      r.asd = std::stod(f[6]);
    }
    rows.push_back(r);
  }
  return rows;
}

// ---- Diversity ------------------------------------------------------------------

double histogram_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("histogram_distance: bin counts differ");
  double sp = 0.0, sq = 0.0;
  for (double v : p) sp += v;
  for (double v : q) sq += v;
  if (sp <= 0.0 || sq <= 0.0) throw std::invalid_argument("histogram_distance: empty histogram");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] / sp - q[i] / sq);
  return 0.5 * d;
}

namespace {

struct Histogram {
  float lo, hi;
  std::vector<double> counts;

  void add(const Volume& v) {
    const double scale = double(counts.size()) / double(hi - lo);
    for (float x : v.values()) {
      auto b = static_cast<std::ptrdiff_t>(std::floor((double(x) - lo) * scale));
      b = std::clamp<std::ptrdiff_t>(b, 0, std::ptrdiff_t(counts.size()) - 1);
      counts[std::size_t(b)] += 1.0;
    }
  }
};

}  // namespace

DiversityReport diversity_report(const Checkpoint& ck, const LoadedDataset& ds, int samples, int bins) {
  if (samples < 1 || bins < 1) throw std::invalid_argument("diversity_report: samples and bins must be positive");
  if (ds.labeled.empty() || ds.unlabeled.empty())
    throw ConfigError("diversity_report: dataset needs labeled and unlabeled training volumes");
  const TrainConfig& cfg = ck.config;
  const Eigen::Index p = Eigen::Index(cfg.backbone.param_count());
  if (ck.state.teacher1.size() != p || ck.state.teacher2.size() != p)
    throw ShapeError("diversity_report: checkpoint does not match its backbone");

  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (const auto* set : {&ds.labeled, &ds.unlabeled})
    for (const auto& v : *set) {
      lo = std::min(lo, v.array().minCoeff());
      hi = std::max(hi, v.array().maxCoeff());
    }
  if (!(hi > lo)) hi = lo + 1.0f;

  const std::vector<double> zeros(std::size_t(bins), 0.0);
  Histogram a1{lo, hi, zeros}, b1{lo, hi, zeros}, a2{lo, hi, zeros}, b2{lo, hi, zeros};
  Rng rng(cfg.seed);
  const Dims dims = ds.labeled.front().dims();
  for (int s = 0; s < samples; ++s) {
    const Quadruple q = sample_quadruple(ds, rng);
    const auto [inner, outer] = draw_masks(cfg, dims, rng);
    const auto [xa1, xa2] = dcp_inputs({q.la, q.ua, q.lb, q.ub, q.y_a, q.y_b, Path::A, inner, outer});
    const auto [xb1, xb2] = dcp_inputs({q.la, q.ua, q.lb, q.ub, q.y_a, q.y_b, Path::B, inner, outer});
    a1.add(xa1);
    b1.add(xb1);
    a2.add(xa2);
    b2.add(xb2);
  }

  DiversityReport r;
  r.hist_distance_in1 = histogram_distance(a1.counts, b1.counts);
  r.hist_distance_in2 = histogram_distance(a2.counts, b2.counts);
  r.hist_distance = 0.5 * (r.hist_distance_in1 + r.hist_distance_in2);
  const Eigen::VectorXd diff = (ck.state.teacher1 - ck.state.teacher2).cast<double>();
  r.teacher_l2 = diff.norm();
  r.teacher_linf = diff.size() ? diff.cwiseAbs().maxCoeff() : 0.0;
  r.samples = samples;
  r.bins = bins;
  r.dcp_mode = to_string(cfg.dcp_mode);
  return r;
}

nlohmann::ordered_json to_json(const DiversityReport& r) {
  nlohmann::ordered_json j;
  j["dcp_mode"] = r.dcp_mode;
  j["samples"] = r.samples;
  j["bins"] = r.bins;
  j["histogram_distance"] = {{"x_in1", r.hist_distance_in1}, {"x_in2", r.hist_distance_in2}, {"mean", r.hist_distance}};
  j["teacher_distance"] = {{"l2", r.teacher_l2}, {"linf", r.teacher_linf}};
  return j;
}

}  // namespace dcpseg

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

#include "dcpseg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace dcpseg {

const char* to_string(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::sse:
      return "sse";
    case EnsembleMode::sum_gt_1:
      return "sum-gt-1";
    case EnsembleMode::both_gt_half:
      return "both-gt-half";
  }
  return "?";
}

const char* to_string(PathMode m) {
  switch (m) {
    case PathMode::random:
      return "random";
    case PathMode::forced_alternate:
      return "forced-alternate";
    case PathMode::single_a:
      return "single-a";
    case PathMode::single_b:
      return "single-b";
  }
  return "?";
}

const char* to_string(DcpMode m) {
  switch (m) {
    case DcpMode::full:
      return "full";
    case DcpMode::step1_only:
      return "step1-only";
    case DcpMode::step2_only:
      return "step2-only";
    case DcpMode::none:
      return "none";
  }
  return "?";
}

const char* to_string(EvalModel m) {
  switch (m) {
    case EvalModel::student:
      return "student";
    case EvalModel::teacher1:
      return "teacher1";
    case EvalModel::teacher2:
      return "teacher2";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Round-trip exact decimal form of a double.
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("bad value for key " + key + ": '" + v + "'");
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value for key " + key + ": '" + v + "'");
  return out;
}

template <typename Enum>
Enum parse_enum(const std::string& key, const std::string& v, std::initializer_list<Enum> options) {
  for (Enum e : options)
    if (v == to_string(e)) return e;
  throw ConfigError("bad value for key " + key + ": '" + v + "'");
}

std::string channels_text(const std::vector<int>& c) {
  std::string s;
  for (std::size_t i = 0; i < c.size(); ++i) s += (i ? "," : "") + std::to_string(c[i]);
  return s;
}

}  // namespace

void validate(const TrainConfig& c) {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  validate(c.loss());
  if (!unit(c.lambda_ema)) throw ConfigError("lambda_ema must lie in [0,1]");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!unit(c.ratio_step1) || !unit(c.ratio_step2)) throw ConfigError("mask ratios must lie in [0,1]");
  if (!(c.sse_threshold >= 0.0)) throw ConfigError("sse_threshold must be non-negative");
  if (!unit(c.path_prob_a)) throw ConfigError("path_prob_a must lie in [0,1]");
  if (c.pretrain_iters < 0 || c.train_iters < 0) throw ConfigError("iteration counts must be non-negative");
  if (c.batch_pairs < 1) throw ConfigError("batch_pairs must be at least 1");
  if (!(c.smooth_beta >= 0.0 && c.smooth_beta < 1.0)) throw ConfigError("smooth_beta must lie in [0,1)");
  if (c.checkpoint_interval < 0 || c.debug_check_interval < 0) throw ConfigError("intervals must be non-negative");
  validate(c.backbone);
}

std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
  return {
      {"alpha", fmt_double(c.alpha)},
      {"lambda_ema", fmt_double(c.lambda_ema)},
      {"lr", fmt_double(c.lr)},
      {"momentum", fmt_double(c.momentum)},
      {"weight_decay", fmt_double(c.weight_decay)},
      {"ratio_step1", fmt_double(c.ratio_step1)},
      {"ratio_step2", fmt_double(c.ratio_step2)},
      {"sse_threshold", fmt_double(c.sse_threshold)},
      {"path_prob_a", fmt_double(c.path_prob_a)},
      {"pretrain_iters", std::to_string(c.pretrain_iters)},
      {"train_iters", std::to_string(c.train_iters)},
      {"batch_pairs", std::to_string(c.batch_pairs)},
      {"seed", std::to_string(c.seed)},
      {"ensemble_mode", to_string(c.ensemble_mode)},
      {"path_mode", to_string(c.path_mode)},
      {"dcp_mode", to_string(c.dcp_mode)},
      {"mask_placement", c.mask_placement == Placement::centered ? "centered" : "random-uniform"},
      {"connectivity", std::to_string(int(c.connectivity))},
      {"smooth_beta", fmt_double(c.smooth_beta)},
      {"dice_eps", fmt_double(c.dice_eps)},
      {"ce_clamp", fmt_double(c.ce_clamp)},
      {"w_dice", fmt_double(c.w_dice)},
      {"w_ce", fmt_double(c.w_ce)},
      {"channels", channels_text(c.backbone.channels)},
      {"kernel", std::to_string(c.backbone.kernel)},
      {"checkpoint_interval", std::to_string(c.checkpoint_interval)},
      {"debug_check_interval", std::to_string(c.debug_check_interval)},
      {"eval_model", to_string(c.eval_model)},
  };
}

void set_key(TrainConfig& c, const std::string& key, const std::string& v) {
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"alpha", [&](const std::string& s) { c.alpha = parse_double(key, s); }},
      {"lambda_ema", [&](const std::string& s) { c.lambda_ema = parse_double(key, s); }},
      {"lr", [&](const std::string& s) { c.lr = parse_double(key, s); }},
      {"momentum", [&](const std::string& s) { c.momentum = parse_double(key, s); }},
      {"weight_decay", [&](const std::string& s) { c.weight_decay = parse_double(key, s); }},
      {"ratio_step1", [&](const std::string& s) { c.ratio_step1 = parse_double(key, s); }},
      {"ratio_step2", [&](const std::string& s) { c.ratio_step2 = parse_double(key, s); }},
      {"sse_threshold", [&](const std::string& s) { c.sse_threshold = parse_double(key, s); }},
      {"path_prob_a", [&](const std::string& s) { c.path_prob_a = parse_double(key, s); }},
      {"pretrain_iters", [&](const std::string& s) { c.pretrain_iters = parse_int<int>(key, s); }},
      {"train_iters", [&](const std::string& s) { c.train_iters = parse_int<int>(key, s); }},
      {"batch_pairs", [&](const std::string& s) { c.batch_pairs = parse_int<int>(key, s); }},
      {"seed", [&](const std::string& s) { c.seed = parse_int<std::uint64_t>(key, s); }},
      {"ensemble_mode",
       [&](const std::string& s) {
         c.ensemble_mode =
             parse_enum(key, s, {EnsembleMode::sse, EnsembleMode::sum_gt_1, EnsembleMode::both_gt_half});
       }},
      {"path_mode",
       [&](const std::string& s) {
         c.path_mode =
             parse_enum(key, s, {PathMode::random, PathMode::forced_alternate, PathMode::single_a, PathMode::single_b});
       }},
      {"dcp_mode",
       [&](const std::string& s) {
         c.dcp_mode = parse_enum(key, s, {DcpMode::full, DcpMode::step1_only, DcpMode::step2_only, DcpMode::none});
       }},
      {"mask_placement",
       [&](const std::string& s) {
         if (s == "centered")
           c.mask_placement = Placement::centered;
         else if (s == "random-uniform")
           c.mask_placement = Placement::random_uniform;
         else
           throw ConfigError("bad value for key " + key + ": '" + s + "'");
       }},
      {"connectivity",
       [&](const std::string& s) {
         const int n = parse_int<int>(key, s);
         if (n != 6 && n != 26) throw ConfigError("bad value for key " + key + ": '" + s + "'");
         c.connectivity = Connectivity(n);
       }},
      {"smooth_beta", [&](const std::string& s) { c.smooth_beta = parse_double(key, s); }},
      {"dice_eps", [&](const std::string& s) { c.dice_eps = parse_double(key, s); }},
      {"ce_clamp", [&](const std::string& s) { c.ce_clamp = parse_double(key, s); }},
      {"w_dice", [&](const std::string& s) { c.w_dice = parse_double(key, s); }},
      {"w_ce", [&](const std::string& s) { c.w_ce = parse_double(key, s); }},
      {"channels",
       [&](const std::string& s) {
         std::vector<int> ch;
         std::stringstream ss(s);
         std::string part;
         while (std::getline(ss, part, ',')) ch.push_back(parse_int<int>(key, trim(part)));
         c.backbone.channels = ch;
       }},
      {"kernel", [&](const std::string& s) { c.backbone.kernel = parse_int<int>(key, s); }},
      {"checkpoint_interval", [&](const std::string& s) { c.checkpoint_interval = parse_int<int>(key, s); }},
      {"debug_check_interval", [&](const std::string& s) { c.debug_check_interval = parse_int<int>(key, s); }},
      {"eval_model",
       [&](const std::string& s) {
         c.eval_model = parse_enum(key, s, {EvalModel::student, EvalModel::teacher1, EvalModel::teacher2});
       }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key: " + key);
  it->second(v);
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_key_values(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string fingerprint(const TrainConfig& cfg) {
  // FNV-1a over the canonical text.
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : format_config(cfg)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dcpseg

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

// Command-line front end: dataset generation, training, evaluation and
// cross-run reporting.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcpseg/config.hpp"
#include "dcpseg/data.hpp"
#include "dcpseg/errors.hpp"
#include "dcpseg/report.hpp"
#include "dcpseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace dcpseg;

namespace {

enum Exit { ok = 0, usage = 2, numeric = 3, io = 4 };

void require_out_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("output directory does not exist: " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write " + path.string());
  out << text;
  if (!out) throw IoError(IoErrorKind::write_failed, "failed writing " + path.string());
}

DatasetRequest load_request(const std::string& path) {
  DatasetRequest req;
  if (path.empty()) return req;
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open spec: " + path);
  from_json(nlohmann::json::parse(in), req);
  return req;
}

int gen_data(const std::string& spec, const fs::path& out, std::uint64_t seed) {
  require_out_dir(out);
  const GeneratedDataset data = generate_dataset(load_request(spec), seed);
  write_dataset(data, out);
  const auto& m = data.manifest;
  std::printf("wrote %zu volumes to %s: labeled-train=%d unlabeled-train=%d val=%d test=%d\n", m.entries.size(),
              out.string().c_str(), m.count(Split::labeled_train), m.count(Split::unlabeled_train), m.count(Split::val),
              m.count(Split::test));
  return ok;
}

int pretrain_cmd(const fs::path& config, const fs::path& data, const fs::path& out) {
  require_out_dir(out);
  const TrainConfig cfg = load_config(config);
  const LoadedDataset ds = load_dataset(data);
  Rng rng(cfg.seed);
  const Params init = init_params<float>(cfg.backbone, rng);
  const Params pre = pretrain(cfg, init, ds.labeled, ds.labeled_truth, rng);
  const TrainState state = init_state(cfg, pre, rng);
  write_checkpoint(out / "pretrained.ckpt", state, cfg);
  const EvalResult ev = evaluate(cfg.backbone, pre, ds.test, ds.test_truth, ds.manifest.phantom.spacing, cfg.connectivity);
  nlohmann::ordered_json j;
  j["fingerprint"] = fingerprint(cfg);
  j["baseline"] = to_json(ev);
  write_text(out / "pretrain_eval.json", j.dump(2) + "\n");
  std::printf("pretrained %d iterations; test dice %.4f\n", cfg.pretrain_iters, ev.mean.dice);
  return ok;
}

int train_cmd(const fs::path& config, const fs::path& data, const fs::path& out, bool quiet) {
  require_out_dir(out);
  const TrainConfig cfg = load_config(config);
  const LoadedDataset ds = load_dataset(data);
  RunOptions opt;
  opt.out_dir = out;
  if (!quiet) {
    opt.on_step = [&](const StepRecord& r, const TrainState&) {
      if ((r.iter + 1) % 50 == 0 || r.iter + 1 == cfg.train_iters)
        std::fprintf(stderr, "iter %d/%d loss %.4f\n", r.iter + 1, cfg.train_iters, r.loss_total);
    };
  }
  const RunResult res = run_pipeline(cfg, ds, opt);
  std::printf("baseline dice %.4f -> final dice %.4f (hd95 %.3f, asd %.3f)\n", res.baseline.mean.dice,
              res.final_eval.mean.dice, res.final_eval.mean.hd95, res.final_eval.mean.asd);
  return ok;
}

int eval_cmd(const fs::path& checkpoint, const fs::path& data, const std::string& split, const std::string& model,
             const std::string& out) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const LoadedDataset ds = load_dataset(data);
  EvalModel which = ck.config.eval_model;
  if (!model.empty()) {
    TrainConfig tmp;
    set_key(tmp, "eval_model", model);
    which = tmp.eval_model;
  }
  const bool val = split == "val";
  const auto& vols = val ? ds.val : ds.test;
  const auto& truth = val ? ds.val_truth : ds.test_truth;
  const EvalResult ev = evaluate(ck.config.backbone, eval_params(ck.state, which), vols, truth,
                                 ds.manifest.phantom.spacing, ck.config.connectivity);
  nlohmann::ordered_json j;
  j["split"] = split;
  j["model"] = to_string(which);
  j["iteration"] = ck.state.iteration;
  j["result"] = to_json(ev);
  const std::string text = j.dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text(out, text);
  return ok;
}

int report_cmd(const std::vector<std::string>& logs, const std::string& csv, const std::string& format) {
  std::vector<fs::path> dirs(logs.begin(), logs.end());
  const auto rows = build_report(dirs);
  std::cout << (format == "csv" ? to_csv(rows) : format_table(rows));
  if (!csv.empty()) write_text(csv, to_csv(rows));
  return ok;
}

int diversity_cmd(const fs::path& checkpoint, const fs::path& data, int samples, int bins, const std::string& out) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const LoadedDataset ds = load_dataset(data);
  const std::string text = to_json(diversity_report(ck, ds, samples, bins)).dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text(out, text);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-teacher double copy-paste segmentation on synthetic volumes"};
  app.require_subcommand(1, 1);

  std::string spec, config, data, checkpoint, split = "test", model, out_file, csv, format = "text";
  fs::path out;
  std::uint64_t seed = 0;
  bool quiet = false;
  int samples = 32, bins = 64;
  std::vector<std::string> logs;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and its manifest");
  gen->add_option("--spec", spec, "Dataset request JSON (defaults apply when omitted)");
  gen->add_option("--out", out, "Existing output directory")->required();
  gen->add_option("--seed", seed, "Generation seed");

  auto* pre = app.add_subcommand("pretrain", "Supervised copy-paste pretraining only");
  pre->add_option("--config", config, "Training config")->required();
  pre->add_option("--data", data, "Dataset manifest")->required();
  pre->add_option("--out", out, "Existing output directory")->required();

  auto* train = app.add_subcommand("train", "Pretrain, run the dual-teacher loop and evaluate");
  train->add_option("--config", config, "Training config")->required();
  train->add_option("--data", data, "Dataset manifest")->required();
  train->add_option("--out", out, "Existing output directory")->required();
  train->add_flag("--quiet", quiet, "Suppress progress on stderr");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset manifest")->required();
  ev->add_option("--split", split, "test or val")->check(CLI::IsMember({"test", "val"}));
  ev->add_option("--model", model, "student, teacher1 or teacher2 (default: config eval_model)");
  ev->add_option("--out", out_file, "Write JSON here instead of stdout");

  auto* rep = app.add_subcommand("report", "Compare final metrics across run directories");
  rep->add_option("--logs", logs, "Run directories")->required()->expected(1, -1);
  rep->add_option("--csv", csv, "Also write the table as CSV");
  rep->add_option("--format", format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

  auto* div = app.add_subcommand("diversity-report", "Path A/B input statistics and teacher distance");
  div->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  div->add_option("--data", data, "Dataset manifest")->required();
  div->add_option("--samples", samples, "Quadruples to sample");
  div->add_option("--bins", bins, "Histogram bins");
  div->add_option("--out", out_file, "Write JSON here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*gen) return gen_data(spec, out, seed);
    if (*pre) return pretrain_cmd(config, data, out);
    if (*train) return train_cmd(config, data, out, quiet);
    if (*ev) return eval_cmd(checkpoint, data, split, model, out_file);
    if (*rep) return report_cmd(logs, csv, format);
    if (*div) return diversity_cmd(checkpoint, data, samples, bins, out_file);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return numeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return io;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return usage;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return usage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return usage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return usage;
}

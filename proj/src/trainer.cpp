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

#include "dcpseg/trainer.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dcpseg/errors.hpp"

namespace dcpseg {

unsigned worker_threads() {
  if (const char* env = std::getenv("DCP_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return unsigned(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// the result does not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Two distinct indices when possible.
std::pair<std::size_t, std::size_t> draw_pair(std::size_t n, Rng& rng) {
  if (n == 1) return {0, 0};
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::uniform_int_distribution<std::size_t> second(0, n - 2);
  const std::size_t a = first(rng);
  std::size_t b = second(rng);
  if (b >= a) ++b;
  return {a, b};
}

bool labeled_origin(float v) { return v == 1.0f || v == 3.0f; }

// Re-derives the loss mask from composites of constant tag volumes.
void check_provenance(const Dims& dims, Path path, const BinaryMask& inner, const BinaryMask& outer,
                      const BitGrid& mask) {
  const Volume la(dims, 1.0f), ua(dims, 2.0f), lb(dims, 3.0f), ub(dims, 4.0f);
  const auto [x1, x2] = double_copy_paste(Quad<float>{la, ua, lb, ub}, path, inner.bits(), outer.bits());
  for (Eigen::Index i = 0; i < x1.array().size(); ++i) {
    const bool m = mask[i] != 0;
    if (labeled_origin(x1[i]) != m || labeled_origin(x2[i]) == m)
      throw std::logic_error("provenance check failed: loss mask disagrees with composite origin");
  }
}

}  // namespace

TrainState init_state(const TrainConfig& cfg, const Params& pretrained, Rng rng) {
  if (Eigen::Index(cfg.backbone.param_count()) != pretrained.size())
    throw ShapeError("init_state: parameter vector does not match the backbone");
  TrainState s;
  s.student = pretrained;
  s.teacher1 = pretrained;
  s.teacher2 = pretrained;
  s.opt = OptState<float>::zeros(pretrained.size(), cfg.sgd());
  s.rng = rng;
  return s;
}

Quadruple sample_quadruple(const LoadedDataset& ds, Rng& rng) {
  if (ds.labeled.empty()) throw ConfigError("dataset has no labeled training volumes");
  if (ds.unlabeled.empty()) throw ConfigError("dataset has no unlabeled training volumes");
  const auto [a, b] = draw_pair(ds.labeled.size(), rng);
  const auto [c, d] = draw_pair(ds.unlabeled.size(), rng);
  return {ds.labeled[a], ds.labeled_truth[a], ds.labeled[b], ds.labeled_truth[b], ds.unlabeled[c], ds.unlabeled[d]};
}

Path choose_path(const TrainConfig& cfg, int iteration, Rng& rng) {
  switch (cfg.path_mode) {
    case PathMode::random:
      return sample_path(rng, cfg.path_prob_a);
    case PathMode::forced_alternate:
      return iteration % 2 == 0 ? Path::A : Path::B;
    case PathMode::single_a:
      return Path::A;
    case PathMode::single_b:
      return Path::B;
  }
  throw std::logic_error("unhandled path mode");
}

std::pair<BinaryMask, BinaryMask> draw_masks(const TrainConfig& cfg, const Dims& dims, Rng& rng) {
  BinaryMask inner = gen_mask({dims, cfg.ratio_step1, cfg.mask_placement}, rng);
  BinaryMask outer = gen_mask({dims, cfg.ratio_step2, cfg.mask_placement}, rng);
  const bool step1 = cfg.dcp_mode == DcpMode::full || cfg.dcp_mode == DcpMode::step1_only;
  const bool step2 = cfg.dcp_mode == DcpMode::full || cfg.dcp_mode == DcpMode::step2_only;
  return {step1 ? std::move(inner) : BinaryMask::ones(dims), step2 ? std::move(outer) : BinaryMask::ones(dims)};
}

std::pair<LabelVolume, SseDecision> pseudo_label(const ProbVolume& r1, const ProbVolume& r2, const TrainConfig& cfg) {
  auto [fused, decision] = fuse(r1, r2, cfg.sse(), cfg.ensemble_mode);
  return {largest_component(fused, cfg.connectivity), decision};
}

StepRecord train_step(TrainState& state, const TrainConfig& cfg, std::span<const Quadruple> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const Dims dims = batch.front().la.dims();
  const Path path = choose_path(cfg, state.iteration, state.rng);
  const auto [inner, outer] = draw_masks(cfg, dims, state.rng);
  const BitGrid mask = loss_mask(path, outer.bits(), inner.bits());

  if (cfg.debug_check_interval > 0 && state.iteration % cfg.debug_check_interval == 0)
    check_provenance(dims, path, inner, outer, mask);

  // Teacher inference on both unlabeled volumes of every quadruple, with the
  // parameters as they stand before this step's update.
  const std::size_t n = batch.size();
  std::vector<ProbVolume> preds(4 * n);
  parallel_for(4 * n, [&](std::size_t i) {
    const Quadruple& q = batch[i / 4];
    const Volume& u = (i % 4) < 2 ? q.ua : q.ub;
    const Params& teacher = (i % 2) == 0 ? state.teacher1 : state.teacher2;
    preds[i] = forward<float>(cfg.backbone, teacher, u);
  });

  StepRecord rec;
  rec.iter = state.iteration;
  rec.path = path;
  rec.teacher_updated = path == Path::A ? 1 : 2;

  const Volume w1 = loss_weights<float>(mask, cfg.alpha, PrimaryRegion::mask);
  const Volume w2 = loss_weights<float>(mask, cfg.alpha, PrimaryRegion::complement);
  std::vector<Volume> inputs;
  std::vector<LabelVolume> targets;
  inputs.reserve(2 * n);
  targets.reserve(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    const Quadruple& q = batch[k];
    auto [p_a, d_a] = pseudo_label(preds[4 * k], preds[4 * k + 1], cfg);
    auto [p_b, d_b] = pseudo_label(preds[4 * k + 2], preds[4 * k + 3], cfg);
    if (k == 0) {
      rec.dissim_a = d_a.dissimilarity;
      rec.dissim_b = d_b.dissimilarity;
      rec.regime_a = d_a.regime;
      rec.regime_b = d_b.regime;
    }
    auto [x1, x2] = dcp_inputs({q.la, q.ua, q.lb, q.ub, q.y_a, q.y_b, path, inner, outer});
    auto [y1, y2] = dcp_labels(q.y_a, q.y_b, p_a, p_b, path, inner.bits(), outer.bits());
    inputs.push_back(std::move(x1));
    inputs.push_back(std::move(x2));
    targets.push_back(std::move(y1));
    targets.push_back(std::move(y2));
  }
  state.smoothed_dissim_a = smooth_curve(state.smoothed_dissim_a, rec.dissim_a, cfg.smooth_beta);
  state.smoothed_dissim_b = smooth_curve(state.smoothed_dissim_b, rec.dissim_b, cfg.smooth_beta);

  std::vector<TrainingSample<float>> samples;
  samples.reserve(2 * n);
  for (std::size_t i = 0; i < 2 * n; ++i) samples.push_back({inputs[i], targets[i], i % 2 == 0 ? w1 : w2});

  // L_all = L_in1 + L_in2, averaged over quadruples: twice the per-sample mean.
  LossAndGrad<float> lg = loss_and_grad<float>(cfg.backbone, state.student, samples, cfg.loss());
  double in1 = 0.0, in2 = 0.0;
  for (std::size_t i = 0; i < lg.per_sample.size(); ++i) (i % 2 == 0 ? in1 : in2) += lg.per_sample[i].total;
  rec.loss_in1 = in1 / double(n);
  rec.loss_in2 = in2 / double(n);
  rec.loss_total = total_loss(rec.loss_in1, rec.loss_in2);
  if (!std::isfinite(rec.loss_total)) throw NumericError("non-finite training loss at iteration " + std::to_string(rec.iter));

  const Params grad = 2.0f * lg.grad;
  sgd_step(state.student, grad, state.opt);
  Params& teacher = path == Path::A ? state.teacher1 : state.teacher2;
  teacher = ema_update(teacher, state.student, cfg.lambda_ema);
  ++state.iteration;
  return rec;
}

Params pretrain(const TrainConfig& cfg, const Params& init, std::span<const Volume> labeled,
                std::span<const LabelVolume> truth, Rng& rng, std::vector<double>* loss_log) {
  if (labeled.empty()) throw ConfigError("pretrain: labeled set is empty");
  if (labeled.size() != truth.size()) throw ShapeError("pretrain: image and label counts differ");
  Params params = init;
  OptState<float> opt = OptState<float>::zeros(params.size(), cfg.sgd());
  LossConfig loss = cfg.loss();
  loss.alpha = 1.0;
  const Dims dims = labeled.front().dims();
  for (int it = 0; it < cfg.pretrain_iters; ++it) {
    const auto [a, b] = draw_pair(labeled.size(), rng);
    const BinaryMask m = gen_mask({dims, cfg.ratio_step2, cfg.mask_placement}, rng);
    const Volume x1 = composite(labeled[a], labeled[b], m.bits());
    const Volume x2 = composite(labeled[b], labeled[a], m.bits());
    const LabelVolume y1 = composite(truth[a], truth[b], m.bits());
    const LabelVolume y2 = composite(truth[b], truth[a], m.bits());
    const Volume w1 = loss_weights<float>(m.bits(), loss.alpha, PrimaryRegion::mask);
    const Volume w2 = loss_weights<float>(m.bits(), loss.alpha, PrimaryRegion::complement);
    const TrainingSample<float> samples[] = {{x1, y1, w1}, {x2, y2, w2}};
    const LossAndGrad<float> lg = loss_and_grad<float>(cfg.backbone, params, samples, loss);
    if (loss_log) loss_log->push_back(lg.loss);
    sgd_step(params, lg.grad, opt);
  }
  return params;
}

EvalResult evaluate(const BackboneSpec& spec, const Params& params, std::span<const Volume> volumes,
                    std::span<const LabelVolume> truth, const Spacing& spacing, Connectivity connectivity) {
  if (volumes.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  if (volumes.size() != truth.size()) throw ShapeError("evaluate: image and label counts differ");
  EvalResult out;
  out.per_volume.resize(volumes.size());
  parallel_for(volumes.size(), [&](std::size_t i) {
    const ProbVolume q = forward<float>(spec, params, volumes[i]);
    const LabelVolume pred(q.dims(), (q.array() > 0.5f).cast<std::uint8_t>().eval());
    out.per_volume[i] = compute_metrics(largest_component(pred, connectivity), truth[i], spacing);
  });
  out.mean = mean_report(out.per_volume);
  return out;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_volume) per.push_back(m);
  return {{"mean", r.mean}, {"per_volume", per}};
}

// ---- Checkpoints ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[] = "DCPCKPT1";

void put_floats(std::ostream& out, const Params& v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v[i]);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
}

Params get_floats(std::istream& in, std::size_t n, const std::string& where) {
  std::vector<unsigned char> raw(4 * n);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (std::size_t(in.gcount()) != raw.size()) throw IoError(IoErrorKind::truncated, "checkpoint truncated: " + where);
  Params v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = std::uint32_t(raw[4 * i]) | std::uint32_t(raw[4 * i + 1]) << 8 |
                               std::uint32_t(raw[4 * i + 2]) << 16 | std::uint32_t(raw[4 * i + 3]) << 24;
    v[Eigen::Index(i)] = std::bit_cast<float>(bits);
  }
  return v;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg) {
  const std::size_t p = cfg.backbone.param_count();
  if (std::size_t(state.student.size()) != p || std::size_t(state.teacher1.size()) != p ||
      std::size_t(state.teacher2.size()) != p || std::size_t(state.opt.buffer.size()) != p)
    throw ShapeError("write_checkpoint: state does not match the backbone");
  std::ostringstream rng_text;
  rng_text << state.rng;
  nlohmann::ordered_json header;
  header["backbone"] = {{"channels", cfg.backbone.channels}, {"kernel", cfg.backbone.kernel}};
  header["iteration"] = state.iteration;
  header["rng_state"] = rng_text.str();
  header["param_count"] = p;
  header["smoothed_dissim"] = {optional_json(state.smoothed_dissim_a), optional_json(state.smoothed_dissim_b)};
  header["config"] = to_key_values(cfg);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write checkpoint: " + path.string());
  out << kCkptMagic << '\n' << header.dump() << '\n';
  put_floats(out, state.student);
  put_floats(out, state.teacher1);
  put_floats(out, state.teacher2);
  put_floats(out, state.opt.buffer);
  out.flush();
  if (!out) throw IoError(IoErrorKind::write_failed, "failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open checkpoint: " + path.string());
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kCkptMagic)
    throw IoError(IoErrorKind::bad_magic, "not a checkpoint: " + path.string());
  if (!std::getline(in, header_line)) throw IoError(IoErrorKind::truncated, "checkpoint header missing");

  Checkpoint ck;
  std::size_t p = 0;
  try {
    const auto header = nlohmann::json::parse(header_line);
    for (const auto& [k, v] : header.at("config").items()) set_key(ck.config, k, v.get<std::string>());
    validate(ck.config);
    BackboneSpec spec;
    spec.channels = header.at("backbone").at("channels").get<std::vector<int>>();
    spec.kernel = header.at("backbone").at("kernel").get<int>();
    if (!(spec == ck.config.backbone)) throw IoError(IoErrorKind::bad_header, "checkpoint backbone disagrees with config");
    p = header.at("param_count").get<std::size_t>();
    if (p != spec.param_count()) throw IoError(IoErrorKind::bad_header, "checkpoint param_count disagrees with backbone");
    ck.state.iteration = header.at("iteration").get<int>();
    std::istringstream rng_text(header.at("rng_state").get<std::string>());
    rng_text >> ck.state.rng;
    if (!rng_text) throw IoError(IoErrorKind::bad_header, "checkpoint rng state unreadable");
    const auto& sd = header.at("smoothed_dissim");
    if (!sd.at(0).is_null()) ck.state.smoothed_dissim_a = sd.at(0).get<double>();
    if (!sd.at(1).is_null()) ck.state.smoothed_dissim_b = sd.at(1).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::bad_header, std::string("bad checkpoint header: ") + e.what());
  }
  ck.state.student = get_floats(in, p, "student");
  ck.state.teacher1 = get_floats(in, p, "teacher1");
  ck.state.teacher2 = get_floats(in, p, "teacher2");
  ck.state.opt = {get_floats(in, p, "momentum buffer"), ck.config.sgd()};
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(IoErrorKind::bad_header, "trailing bytes in checkpoint");
  return ck;
}

// ---- Training log -----------------------------------------------------------

const char* TrainingLog::columns() {
  return "iter,path,loss_total,loss_in1,loss_in2,dissim_a,dissim_b,regime_a,regime_b,teacher_updated";
}

TrainingLog::TrainingLog(std::ostream& out, const TrainConfig& cfg, const std::string& started) : out_(out) {
  out_ << "# started=" << started << '\n';
  for (const auto& [k, v] : to_key_values(cfg)) out_ << "# " << k << '=' << v << '\n';
  out_ << columns() << '\n';
}

void TrainingLog::append(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%c,%.9g,%.9g,%.9g,%.9g,%.9g,%s,%s,%d\n", r.iter, to_char(r.path), r.loss_total,
                r.loss_in1, r.loss_in2, r.dissim_a, r.dissim_b, to_string(r.regime_a), to_string(r.regime_b),
                r.teacher_updated);
  out_ << buf;
}

// ---- Pipeline -------------------------------------------------------------------

const Params& eval_params(const TrainState& s, EvalModel which) {
  switch (which) {
    case EvalModel::student:
      return s.student;
    case EvalModel::teacher1:
      return s.teacher1;
    case EvalModel::teacher2:
      return s.teacher2;
  }
  throw std::logic_error("unhandled eval model");
}

namespace {

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

std::string checkpoint_name(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06d.ckpt", iteration);
  return buf;
}

}  // namespace

RunResult run_pipeline(const TrainConfig& cfg, const LoadedDataset& ds, const RunOptions& options) {
  validate(cfg);
  if (ds.test.empty()) throw ConfigError("dataset has no test volumes");
  const Spacing spacing = ds.manifest.phantom.spacing;

  Rng rng(cfg.seed);
  RunResult res;
  const Params init = init_params<float>(cfg.backbone, rng);
  res.pretrained = pretrain(cfg, init, ds.labeled, ds.labeled_truth, rng);
  res.baseline = evaluate(cfg.backbone, res.pretrained, ds.test, ds.test_truth, spacing, cfg.connectivity);
  res.state = init_state(cfg, res.pretrained, rng);

  std::ofstream log_file;
  std::optional<TrainingLog> log;
  if (options.out_dir) {
    const auto log_path = *options.out_dir / "train_log.csv";
    log_file.open(log_path, std::ios::trunc);
    if (!log_file) throw IoError(IoErrorKind::open_failed, "cannot write log: " + log_path.string());
    log.emplace(log_file, cfg, timestamp());
  }

  for (int it = 0; it < cfg.train_iters; ++it) {
    std::vector<Quadruple> batch;
    batch.reserve(std::size_t(cfg.batch_pairs));
    for (int k = 0; k < cfg.batch_pairs; ++k) batch.push_back(sample_quadruple(ds, res.state.rng));
    StepRecord rec;
    try {
      rec = train_step(res.state, cfg, batch);
    } catch (const NumericError&) {
      if (options.out_dir) write_checkpoint(*options.out_dir / "failure_state.ckpt", res.state, cfg);
      throw;
    }
    res.log.push_back(rec);
    if (log) log->append(rec);
    if (options.on_step) options.on_step(rec, res.state);
    if (options.out_dir && cfg.checkpoint_interval > 0 && res.state.iteration % cfg.checkpoint_interval == 0)
      write_checkpoint(*options.out_dir / checkpoint_name(res.state.iteration), res.state, cfg);
  }

  res.final_eval = evaluate(cfg.backbone, eval_params(res.state, cfg.eval_model), ds.test, ds.test_truth, spacing,
                            cfg.connectivity);

  if (options.out_dir) {
    write_checkpoint(*options.out_dir / "final.ckpt", res.state, cfg);
    nlohmann::ordered_json report;
    report["fingerprint"] = fingerprint(cfg);
    report["config"] = to_key_values(cfg);
    report["eval_model"] = to_string(cfg.eval_model);
    report["baseline"] = to_json(res.baseline);
    report["final"] = to_json(res.final_eval);
    const auto path = *options.out_dir / "eval.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(IoErrorKind::open_failed, "cannot write report: " + path.string());
    out << report.dump(2) << '\n';
    if (!out) throw IoError(IoErrorKind::write_failed, "failed writing report: " + path.string());
  }
  return res;
}

}  // namespace dcpseg

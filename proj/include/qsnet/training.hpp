#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsnet/adam.hpp"
#include "qsnet/checkpoint.hpp"
#include "qsnet/dataset.hpp"
#include "qsnet/losses.hpp"
#include "qsnet/metrics.hpp"
#include "qsnet/qsnet.hpp"

namespace qsnet {

// Sentinels chosen to stay JSON-representable (inf is not).
constexpr double kNoValPsnrYet = -1.0;
constexpr double kNoValLossYet = 1e300;

struct TrainData {
  std::vector<RainySample> train;
  std::vector<RainySample> val;
  std::string index_hash;  // FNV-1a of index.json, recorded in the manifest
};

namespace detail {

inline std::string fnv1a_hex(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline TrainData load_train_data(const std::string& root) {
  const DatasetIndex index = load_index(root);
  TrainData d;
  d.train = load_split(root, index, "train");
  d.val = load_split(root, index, "val");
  if (d.train.empty() || d.val.empty())
    throw std::invalid_argument("load_train_data: dataset needs nonempty train and val splits");
  d.index_hash = detail::fnv1a_hex(detail::file_bytes(std::filesystem::path(root) / "index.json"));
  return d;
}

struct StepLog {
  int64_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  bool evaluated = false;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_psnr = std::numeric_limits<double>::quiet_NaN();
  double train_psnr = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  Checkpoint best;   // highest validation PSNR seen (final state if no eval ran)
  Checkpoint final;  // state when the loop ended
  std::vector<StepLog> history;
  int64_t steps_run = 0;
  bool stopped_early = false;
  double wall_seconds = 0.0;
  double baseline_train_psnr = 0.0;  // PSNR(rainy, background) on the train split
  double final_train_psnr = kNoValPsnrYet;
};

namespace detail {

// Mean full-image PSNR of the model's derained outputs against ground truth.
inline double split_psnr(const QSNet& model, const std::vector<RainySample>& samples) {
  double acc = 0.0;
  for (const auto& s : samples) {
    const Tensor derained = model.derain(s.rainy.to_tensor());
    acc += psnr(Image::from_tensor(derained), s.background);
  }
  return acc / double(samples.size());
}

inline double identity_psnr(const std::vector<RainySample>& samples) {
  double acc = 0.0;
  for (const auto& s : samples) acc += psnr(s.rainy, s.background);
  return acc / double(samples.size());
}

// Forward-only total loss of one full sample.
inline double sample_loss(const QSNet& model, const RainySample& s, const LossWeights& w) {
  const auto input = ag::make_var(s.rainy.to_tensor());
  const auto out = model.forward(nullptr, input);
  auto loc = std::make_shared<Tensor>(s.location.to_tensor());
  const TotalLoss tl = total_loss(nullptr, input, out.rain, out.aux_rains,
                                  ag::make_var(s.background.to_tensor()), loc, w);
  return tl.breakdown.total;
}

inline void write_csv_header(std::ostream& out) {
  out << "step,lr,total,quasi_sparsity,content,detail,auxiliary,grad_norm,"
         "val_loss,val_psnr,train_psnr\n";
}

inline void write_csv_row(std::ostream& out, const StepLog& row) {
  char buf[360];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(row.step), row.lr, row.loss.total,
                row.loss.quasi_sparsity, row.loss.content, row.loss.detail, row.loss.auxiliary,
                row.grad_norm);
  out << buf;
  if (row.evaluated) {
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g", row.val_loss, row.val_psnr);
    out << buf;
    if (std::isnan(row.train_psnr))
      out << ",";
    else {
      std::snprintf(buf, sizeof(buf), ",%.9g", row.train_psnr);
      out << buf;
    }
  } else {
    out << ",,,";
  }
  out << "\n";
}

}  // namespace detail

// Runs the optimization loop. `out_dir` (optional) receives the training
// CSV, best/final checkpoints, and a run manifest; pass `resume` to continue
// a saved run bit-exactly. Aborts with a diagnostic when the loss leaves the
// finite range.
inline TrainResult train(const TrainData& data, QSNetConfig model_cfg, const TrainConfig& tc,
                         const std::string& out_dir = "", const Checkpoint* resume = nullptr) {
  namespace fs = std::filesystem;
  tc.validate();
  if (data.train.empty() || data.val.empty())
    throw std::invalid_argument("train: needs nonempty train and val splits");
  model_cfg.feature_sharing = tc.feature_sharing;
  model_cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();

  Rng seed_rng(tc.seed);
  Rng init_rng = seed_rng.fork(1);
  Rng data_rng = seed_rng.fork(2);

  QSNet model(model_cfg, init_rng);
  AdamConfig ac;
  ac.lr = tc.base_lr;
  Adam opt(model.params(), ac);

  int64_t step = 0;
  double best_val_psnr = kNoValPsnrYet;
  double plateau_best = kNoValLossYet;
  int64_t plateau_bad = 0;
  if (resume) {
    model = restore_model(*resume);
    opt = restore_optimizer(*resume, model, ac.clip_norm);
    data_rng.set_state(resume->data_rng_state);
    step = resume->step;
    best_val_psnr = resume->best_val_psnr;
    plateau_best = resume->plateau_best_val_loss;
    plateau_bad = resume->plateau_bad_evals;
  }

  const LossWeights weights = variant_weights(tc.weights, tc.variant);

  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    csv.open(fs::path(out_dir) / "train_log.csv",
             resume ? (std::ios::out | std::ios::app) : std::ios::out);
    if (!csv) throw std::runtime_error("train: cannot write log under " + out_dir);
    if (!resume) detail::write_csv_header(csv);
  }

  TrainResult result;
  result.baseline_train_psnr = detail::identity_psnr(data.train);
  bool has_best = false;
  Checkpoint best_ckpt;

  auto snapshot = [&]() {
    return make_checkpoint(model, opt, tc, step, best_val_psnr, data_rng.state(), plateau_best,
                           plateau_bad);
  };

  while (step < tc.max_steps) {
    BatchMeta meta;
    const Batch batch = sample_batch(data.train, tc.batch_size, tc.crop, data_rng, &meta);

    ag::Tape tape;
    const auto input = ag::make_var(batch.rainy);
    const auto bg_truth = ag::make_var(batch.background);
    auto loc = std::make_shared<Tensor>(batch.location);
    const auto out = model.forward(&tape, input);
    const TotalLoss tl =
        total_loss(&tape, input, out.rain, out.aux_rains, bg_truth, loc, weights);

    if (!std::isfinite(tl.breakdown.total)) {
      std::ostringstream diag;
      diag << "non-finite loss at step " << (step + 1) << "; batch [" << meta.describe() << "]"
           << "; terms q=" << tl.breakdown.quasi_sparsity << " c=" << tl.breakdown.content
           << " d=" << tl.breakdown.detail << " a=" << tl.breakdown.auxiliary
           << "; |rain|max=" << out.rain->val.abs_max() << "; lr=" << opt.lr();
      if (!out_dir.empty()) {
        std::ofstream dump(fs::path(out_dir) / "nan_dump.txt");
        dump << diag.str() << "\n";
      }
      throw std::runtime_error("train: " + diag.str());
    }

    model.zero_grads();
    tape.backward(tl.total);
    opt.step(model.params());
    ++step;

    StepLog row;
    row.step = step;
    row.lr = opt.lr();
    row.loss = tl.breakdown;
    row.grad_norm = opt.last_grad_norm();

    const bool last_step = step == tc.max_steps;
    if (step % tc.eval_interval == 0 || last_step) {
      row.evaluated = true;
      double val_loss = 0.0;
      for (const auto& s : data.val) val_loss += detail::sample_loss(model, s, weights);
      val_loss /= double(data.val.size());
      row.val_loss = val_loss;
      row.val_psnr = detail::split_psnr(model, data.val);
      if (tc.stop_at_train_psnr > 0) row.train_psnr = detail::split_psnr(model, data.train);

      if (val_loss < plateau_best * (1.0 - tc.min_rel_improve)) {
        plateau_best = val_loss;
        plateau_bad = 0;
      } else if (++plateau_bad >= tc.plateau_patience) {
        opt.set_lr(opt.lr() * tc.plateau_factor);
        plateau_bad = 0;
      }

      if (row.val_psnr > best_val_psnr) {
        best_val_psnr = row.val_psnr;
        best_ckpt = snapshot();
        has_best = true;
        if (!out_dir.empty())
          save_checkpoint((fs::path(out_dir) / "checkpoint_best.bin").string(), best_ckpt);
      }

      if (tc.stop_at_train_psnr > 0 && row.train_psnr >= tc.stop_at_train_psnr) {
        result.stopped_early = true;
        result.history.push_back(row);
        if (csv.is_open()) detail::write_csv_row(csv, row);
        break;
      }
    }
    result.history.push_back(row);
    if (csv.is_open()) detail::write_csv_row(csv, row);
  }

  result.final = snapshot();
  result.best = has_best ? best_ckpt : result.final;
  result.steps_run = step - (resume ? resume->step : 0);
  if (tc.stop_at_train_psnr > 0 && !result.history.empty() &&
      !std::isnan(result.history.back().train_psnr))
    result.final_train_psnr = result.history.back().train_psnr;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (!out_dir.empty()) {
    save_checkpoint((fs::path(out_dir) / "checkpoint_final.bin").string(), result.final);
    if (!has_best)
      save_checkpoint((fs::path(out_dir) / "checkpoint_best.bin").string(), result.best);
    nlohmann::json manifest;
    manifest["model_config"] = model_cfg;
    manifest["train_config"] = tc;
    manifest["dataset_index_hash"] = data.index_hash;
    manifest["steps_run"] = result.steps_run;
    manifest["final_step"] = step;
    manifest["stopped_early"] = result.stopped_early;
    manifest["wall_seconds"] = result.wall_seconds;
    manifest["best_val_psnr"] = best_val_psnr;
    manifest["baseline_train_psnr"] = result.baseline_train_psnr;
    manifest["loss_weights_effective"] = weights;
    std::ofstream mf(fs::path(out_dir) / "run_manifest.json");
    mf << manifest.dump(2) << "\n";
  }
  return result;
}

}  // namespace qsnet

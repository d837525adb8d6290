#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qsnet/checkpoint.hpp"
#include "qsnet/dataset.hpp"
#include "qsnet/image.hpp"
#include "qsnet/metrics.hpp"
#include "qsnet/qsnet.hpp"
#include "qsnet/sparsity.hpp"

namespace qsnet {

// ---------------------------------------------------------------------------
// Split scoring
// ---------------------------------------------------------------------------

struct ImageScore {
  std::string id;
  double psnr_rgb = 0.0;           // joint over all channels
  double psnr_channel_mean = 0.0;  // per-channel PSNR averaged
  double psnr_luma = 0.0;
  double ssim = 0.0;
};

struct SplitScore {
  std::vector<ImageScore> rows;
  double mean_psnr_rgb = 0.0;
  double mean_psnr_channel_mean = 0.0;
  double mean_psnr_luma = 0.0;
  double mean_ssim = 0.0;
};

inline Image derain_image(const QSNet& model, const Image& rainy) {
  return Image::from_tensor(model.derain(rainy.to_tensor()));
}

inline SplitScore evaluate(const QSNet& model, const std::vector<RainySample>& split) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  SplitScore sc;
  for (const auto& s : split) {
    const Image b = derain_image(model, s.rainy);
    ImageScore row;
    row.id = s.id;
    row.psnr_rgb = psnr(b, s.background);
    row.psnr_channel_mean = psnr_channel_mean(b, s.background);
    row.psnr_luma = psnr_luma(b, s.background);
    row.ssim = ssim(b, s.background);
    sc.rows.push_back(std::move(row));
  }
  for (const auto& r : sc.rows) {
    sc.mean_psnr_rgb += r.psnr_rgb;
    sc.mean_psnr_channel_mean += r.psnr_channel_mean;
    sc.mean_psnr_luma += r.psnr_luma;
    sc.mean_ssim += r.ssim;
  }
  const double n = double(sc.rows.size());
  sc.mean_psnr_rgb /= n;
  sc.mean_psnr_channel_mean /= n;
  sc.mean_psnr_luma /= n;
  sc.mean_ssim /= n;
  return sc;
}

inline void write_scores_csv(const std::string& path, const SplitScore& sc) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_scores_csv: cannot open " + path);
  f << "id,psnr,psnr_channel_mean,psnr_luma,ssim\n";
  char line[256];
  for (const auto& r : sc.rows) {
    std::snprintf(line, sizeof(line), "%s,%.9g,%.9g,%.9g,%.9g\n", r.id.c_str(), r.psnr_rgb,
                  r.psnr_channel_mean, r.psnr_luma, r.ssim);
    f << line;
  }
}

inline void write_score_summary_json(const std::string& path, const SplitScore& sc,
                                     const std::string& split_name) {
  nlohmann::json j;
  j["split"] = split_name;
  j["n_images"] = sc.rows.size();
  j["mean_psnr"] = sc.mean_psnr_rgb;
  j["mean_psnr_channel_mean"] = sc.mean_psnr_channel_mean;
  j["mean_psnr_luma"] = sc.mean_psnr_luma;
  j["mean_ssim"] = sc.mean_ssim;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_score_summary_json: cannot open " + path);
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Per-scale decoding study: score each auxiliary rain prediction on its own
// against the fused main output.
// ---------------------------------------------------------------------------

struct PerScaleReport {
  std::vector<std::string> columns;  // "C1".."Cn", then "all"
  std::vector<double> mean_psnr;     // parallel to columns
  std::vector<double> mean_ssim;
};

inline PerScaleReport per_scale_decode_eval(const QSNet& model,
                                            const std::vector<RainySample>& split) {
  if (split.empty()) throw std::invalid_argument("per_scale_decode_eval: empty split");
  const int n_aux = model.config().n_aux;
  PerScaleReport rep;
  for (int i = 0; i < n_aux; ++i) rep.columns.push_back("C" + std::to_string(i + 1));
  rep.columns.push_back("all");
  rep.mean_psnr.assign(rep.columns.size(), 0.0);
  rep.mean_ssim.assign(rep.columns.size(), 0.0);
  for (const auto& s : split) {
    const Tensor input = s.rainy.to_tensor();
    const auto out = model.forward(nullptr, ag::make_var(input));
    auto score_rain = [&](const Tensor& rain, size_t col) {
      Tensor b = input;
      for (int64_t k = 0; k < b.numel(); ++k)
        b.data[size_t(k)] = std::clamp(b.data[size_t(k)] - rain.data[size_t(k)], 0.0f, 1.0f);
      const Image bi = Image::from_tensor(b);
      rep.mean_psnr[col] += psnr(bi, s.background);
      rep.mean_ssim[col] += ssim(bi, s.background);
    };
    for (int i = 0; i < n_aux; ++i) score_rain(out.aux_rains[size_t(i)]->val, size_t(i));
    score_rain(out.rain->val, size_t(n_aux));
  }
  for (size_t c = 0; c < rep.columns.size(); ++c) {
    rep.mean_psnr[c] /= double(split.size());
    rep.mean_ssim[c] /= double(split.size());
  }
  return rep;
}

inline void write_per_scale_csv(const std::string& path, const PerScaleReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_per_scale_csv: cannot open " + path);
  f << "metric";
  for (const auto& c : rep.columns) f << "," << c;
  f << "\n";
  char buf[64];
  f << "psnr";
  for (double v : rep.mean_psnr) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    f << buf;
  }
  f << "\nssim";
  for (double v : rep.mean_ssim) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    f << buf;
  }
  f << "\n";
}

// ---------------------------------------------------------------------------
// Output sparsity verification: chord test on input, derained output, and
// predicted rain layer per image.
// ---------------------------------------------------------------------------

struct SampleSparsity {
  std::string id;
  SparsityReport input;
  SparsityReport output;
  SparsityReport rain;
};

inline std::vector<SampleSparsity> verify_output_sparsity(const QSNet& model,
                                                          const std::vector<RainySample>& split,
                                                          int n_bins = kDefaultHistogramBins,
                                                          double eps = kChordEps) {
  std::vector<SampleSparsity> out;
  for (const auto& s : split) {
    const Tensor input = s.rainy.to_tensor();
    const auto fwd = model.forward(nullptr, ag::make_var(input));
    Tensor b = input;
    for (int64_t k = 0; k < b.numel(); ++k)
      b.data[size_t(k)] =
          std::clamp(b.data[size_t(k)] - fwd.rain->val.data[size_t(k)], 0.0f, 1.0f);
    SampleSparsity row;
    row.id = s.id;
    row.input = analyze_values(filter_responses(s.rainy), n_bins, eps);
    row.output = analyze_values(filter_responses(Image::from_tensor(b)), n_bins, eps);
    row.rain = analyze_values(filter_responses(Image::from_tensor(fwd.rain->val)), n_bins, eps);
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_output_sparsity_csv(const std::string& path,
                                      const std::vector<SampleSparsity>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_output_sparsity_csv: cannot open " + path);
  f << "id,which,verdict,max_chord_excess,degenerate\n";
  auto emit = [&](const std::string& id, const char* which, const SparsityReport& r) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", r.max_chord_excess);
    f << id << "," << which << "," << (r.verdict == Verdict::sparse ? "sparse" : "nonsparse")
      << "," << buf << "," << (r.degenerate ? 1 : 0) << "\n";
  };
  for (const auto& r : rows) {
    emit(r.id, "input", r.input);
    emit(r.id, "output", r.output);
    emit(r.id, "rain", r.rain);
  }
}

// ---------------------------------------------------------------------------
// Timing harness: forward + subtraction only, tensor-in to tensor-out.
// ---------------------------------------------------------------------------

struct TimingReport {
  int64_t height = 0;
  int64_t width = 0;
  int n_warmup = 0;
  int n_runs = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  std::string hardware;
};

inline std::string hardware_descriptor() {
  std::string model = "unknown-cpu";
  std::ifstream f("/proc/cpuinfo");
  std::string line;
  while (std::getline(f, line)) {
    const auto pos = line.find("model name");
    if (pos != std::string::npos) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        model = line.substr(colon + 1);
        while (!model.empty() && model.front() == ' ') model.erase(model.begin());
      }
      break;
    }
  }
  return model + " x" + std::to_string(std::thread::hardware_concurrency());
}

inline TimingReport benchmark_speed(const QSNet& model, int64_t h, int64_t w, int n_warmup = 10,
                                    int n_runs = 50, uint64_t seed = 0) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("benchmark_speed: empty input size");
  if (n_warmup < 0 || n_runs < 1) throw std::invalid_argument("benchmark_speed: bad run counts");
  Rng rng(seed);
  auto random_input = [&]() {
    Tensor t({1, 3, h, w});
    for (auto& v : t.data) v = float(rng.uniform());
    return t;
  };
  for (int i = 0; i < n_warmup; ++i) {
    const Tensor in = random_input();
    (void)model.derain(in);
  }
  std::vector<double> ms(size_t(n_runs), 0.0);
  for (int i = 0; i < n_runs; ++i) {
    const Tensor in = random_input();  // generated outside the timed span
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor out = model.derain(in);
    const auto t1 = std::chrono::steady_clock::now();
    (void)out;
    ms[size_t(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  TimingReport rep;
  rep.height = h;
  rep.width = w;
  rep.n_warmup = n_warmup;
  rep.n_runs = n_runs;
  for (double v : ms) rep.mean_ms += v;
  rep.mean_ms /= double(n_runs);
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  rep.median_ms = n_runs % 2 == 1 ? sorted[size_t(n_runs / 2)]
                                  : 0.5 * (sorted[size_t(n_runs / 2 - 1)] + sorted[size_t(n_runs / 2)]);
  rep.hardware = hardware_descriptor();
  return rep;
}

// ---------------------------------------------------------------------------
// Ablation study: PSNR/SSIM for four loss variants over three splits.
// ---------------------------------------------------------------------------

struct AllSplits {
  std::vector<RainySample> train, val, test;
};

inline AllSplits load_all_splits(const std::string& root) {
  const DatasetIndex index = load_index(root);
  AllSplits d;
  d.train = load_split(root, index, "train");
  d.val = load_split(root, index, "val");
  d.test = load_split(root, index, "test");
  return d;
}

struct AblationRow {
  Variant variant = Variant::V4;
  std::string split;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // 4 variants x 3 splits
};

inline AblationReport run_ablation(const AllSplits& data,
                                   const std::map<Variant, Checkpoint>& checkpoints) {
  for (Variant v : {Variant::V1, Variant::V2, Variant::V3, Variant::V4})
    if (checkpoints.find(v) == checkpoints.end())
      throw std::invalid_argument(std::string("run_ablation: missing checkpoint for ") +
                                  variant_name(v));
  AblationReport rep;
  for (Variant v : {Variant::V1, Variant::V2, Variant::V3, Variant::V4}) {
    const QSNet model = restore_model(checkpoints.at(v));
    const std::vector<std::pair<std::string, const std::vector<RainySample>*>> splits = {
        {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
    for (const auto& [name, samples] : splits) {
      const SplitScore sc = evaluate(model, *samples);
      rep.rows.push_back({v, name, sc.mean_psnr_rgb, sc.mean_ssim});
    }
  }
  return rep;
}

inline void write_ablation_csv(const std::string& path, const AblationReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_ablation_csv: cannot open " + path);
  f << "variant,split,psnr,ssim\n";
  char buf[96];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g\n", variant_name(r.variant), r.split.c_str(),
                  r.mean_psnr, r.mean_ssim);
    f << buf;
  }
}

// ---------------------------------------------------------------------------
// Feature-sharing study: quality and latency for two models that differ only
// in the cross-group channel exchange.
// ---------------------------------------------------------------------------

struct SharingReport {
  int64_t param_count_on = 0;
  int64_t param_count_off = 0;
  double mean_psnr_on = 0.0;
  double mean_ssim_on = 0.0;
  double mean_psnr_off = 0.0;
  double mean_ssim_off = 0.0;
  double median_ms_on = 0.0;
  double median_ms_off = 0.0;
};

inline SharingReport run_sharing_study(const std::vector<RainySample>& test_split,
                                       const Checkpoint& with_sharing,
                                       const Checkpoint& without_sharing, int n_warmup = 10,
                                       int n_runs = 50) {
  QSNetConfig a = with_sharing.model_config, b = without_sharing.model_config;
  if (!a.feature_sharing || b.feature_sharing)
    throw std::invalid_argument("run_sharing_study: expected sharing-on and sharing-off");
  a.feature_sharing = b.feature_sharing = true;
  if (a.channels != b.channels || a.groups != b.groups || a.n_units != b.n_units ||
      a.atrous_rates != b.atrous_rates || a.n_aux != b.n_aux)
    throw std::invalid_argument("run_sharing_study: checkpoints differ beyond feature sharing");
  if (test_split.empty()) throw std::invalid_argument("run_sharing_study: empty split");
  const QSNet on = restore_model(with_sharing);
  const QSNet off = restore_model(without_sharing);
  SharingReport rep;
  rep.param_count_on = on.param_count();
  rep.param_count_off = off.param_count();
  const SplitScore sc_on = evaluate(on, test_split);
  const SplitScore sc_off = evaluate(off, test_split);
  rep.mean_psnr_on = sc_on.mean_psnr_rgb;
  rep.mean_ssim_on = sc_on.mean_ssim;
  rep.mean_psnr_off = sc_off.mean_psnr_rgb;
  rep.mean_ssim_off = sc_off.mean_ssim;
  const int64_t h = test_split.front().rainy.h, w = test_split.front().rainy.w;
  rep.median_ms_on = benchmark_speed(on, h, w, n_warmup, n_runs).median_ms;
  rep.median_ms_off = benchmark_speed(off, h, w, n_warmup, n_runs).median_ms;
  return rep;
}

// ---------------------------------------------------------------------------
// Side-by-side panel: input | derained | rain layer | ground truth.
// ---------------------------------------------------------------------------

inline Image side_by_side_panel(const QSNet& model, const RainySample& s) {
  const Tensor input = s.rainy.to_tensor();
  const auto fwd = model.forward(nullptr, ag::make_var(input));
  Tensor b = input;
  for (int64_t k = 0; k < b.numel(); ++k)
    b.data[size_t(k)] = std::clamp(b.data[size_t(k)] - fwd.rain->val.data[size_t(k)], 0.0f, 1.0f);
  Image rain = Image::from_tensor(fwd.rain->val);
  for (auto& v : rain.px) v = std::clamp(v, 0.0f, 1.0f);
  const Image derained = Image::from_tensor(b);
  const int64_t h = s.rainy.h, w = s.rainy.w;
  Image panel(h, 4 * w, 3);
  const Image* tiles[4] = {&s.rainy, &derained, &rain, &s.background};
  for (int t = 0; t < 4; ++t)
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) panel.at(ch, y, t * w + x) = tiles[t]->at(ch, y, x);
  return panel;
}

}  // namespace qsnet

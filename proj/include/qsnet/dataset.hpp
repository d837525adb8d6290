#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qsnet/png_io.hpp"
#include "qsnet/rain.hpp"
#include "qsnet/rng.hpp"
#include "qsnet/tensor.hpp"

namespace qsnet {

inline void to_json(nlohmann::json& j, const RainParams& p) {
  j = nlohmann::json{{"streak_count_per_kpx", p.streak_count_per_kpx},
                     {"angle_min_deg", p.angle_min_deg},
                     {"angle_max_deg", p.angle_max_deg},
                     {"length_min_px", p.length_min_px},
                     {"length_max_px", p.length_max_px},
                     {"width_min_px", p.width_min_px},
                     {"width_max_px", p.width_max_px},
                     {"intensity_min", p.intensity_min},
                     {"intensity_max", p.intensity_max},
                     {"blur_sigma", p.blur_sigma},
                     {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, RainParams& p) {
  j.at("streak_count_per_kpx").get_to(p.streak_count_per_kpx);
  j.at("angle_min_deg").get_to(p.angle_min_deg);
  j.at("angle_max_deg").get_to(p.angle_max_deg);
  j.at("length_min_px").get_to(p.length_min_px);
  j.at("length_max_px").get_to(p.length_max_px);
  j.at("width_min_px").get_to(p.width_min_px);
  j.at("width_max_px").get_to(p.width_max_px);
  j.at("intensity_min").get_to(p.intensity_min);
  j.at("intensity_max").get_to(p.intensity_max);
  j.at("blur_sigma").get_to(p.blur_sigma);
  j.at("seed").get_to(p.seed);
}

struct DatasetIndex {
  struct Entry {
    std::string id;
    std::string split;  // train | val | test
    uint64_t seed = 0;  // per-sample synthesis seed
  };
  uint64_t seed = 0;  // master seed the builder ran with
  RainParams params;
  std::vector<Entry> entries;

  std::vector<Entry> split_entries(const std::string& split) const {
    std::vector<Entry> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e);
    return out;
  }
};

namespace detail {

inline std::string sample_path(const std::filesystem::path& root, const DatasetIndex::Entry& e,
                               const char* kind) {
  return (root / e.split / (e.id + "_" + kind + ".png")).string();
}

inline std::string format_id(const std::string& split, int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04lld", split.c_str(), static_cast<long long>(i));
  return buf;
}

}  // namespace detail

// Generates `n_train + n_val + n_test` paired samples under `root`, one
// distinct background per sample so the splits never share scene content.
// Backgrounds come from `backgrounds_dir` (PNG files, error if too few) or
// are synthesized procedurally when the directory is empty or unset.
inline DatasetIndex build_dataset(const std::string& root, const std::string& backgrounds_dir,
                                  const RainParams& params, int64_t n_train, int64_t n_val,
                                  int64_t n_test, uint64_t seed, int64_t proc_h = 256,
                                  int64_t proc_w = 256) {
  namespace fs = std::filesystem;
  if (n_train < 0 || n_val < 0 || n_test < 0)
    throw std::invalid_argument("build_dataset: negative split size");
  const int64_t n_total = n_train + n_val + n_test;
  if (n_total == 0) throw std::invalid_argument("build_dataset: empty dataset requested");
  params.validate();

  std::vector<std::string> bg_files;
  if (!backgrounds_dir.empty() && fs::exists(backgrounds_dir)) {
    for (const auto& entry : fs::directory_iterator(backgrounds_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".png")
        bg_files.push_back(entry.path().string());
    std::sort(bg_files.begin(), bg_files.end());
  }

  Rng master(seed);
  if (!bg_files.empty()) {
    if (int64_t(bg_files.size()) < n_total)
      throw std::invalid_argument("build_dataset: " + std::to_string(bg_files.size()) +
                                  " backgrounds cannot fill " + std::to_string(n_total) +
                                  " samples with disjoint splits");
    // Deterministic Fisher-Yates so the split assignment is unbiased but
    // reproducible from the master seed.
    for (size_t i = bg_files.size(); i > 1; --i)
      std::swap(bg_files[i - 1], bg_files[size_t(master.uniform_int(0, int64_t(i) - 1))]);
    bg_files.resize(size_t(n_total));
  }

  DatasetIndex index;
  index.seed = seed;
  index.params = params;

  for (const auto* split : {"train", "val", "test"}) fs::create_directories(fs::path(root) / split);

  int64_t split_counter = 0;
  std::string prev_split;
  for (int64_t i = 0; i < n_total; ++i) {
    const std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    if (split != prev_split) {
      split_counter = 0;
      prev_split = split;
    }
    DatasetIndex::Entry e;
    e.split = split;
    e.id = detail::format_id(split, split_counter++);
    e.seed = master.next_u64();

    // Background and rain draw from decoupled streams so scene appearance
    // never correlates with streak geometry.
    Image background = bg_files.empty()
                           ? procedural_background(proc_h, proc_w, splitmix64(e.seed ^ 0xb67ac5ULL))
                           : read_png(bg_files[size_t(i)]);
    if (background.c == 1) {  // grayscale source: replicate to RGB
      Image rgb(background.h, background.w, 3);
      for (int64_t ch = 0; ch < 3; ++ch)
        std::copy(background.px.begin(), background.px.end(), rgb.plane(ch));
      background = std::move(rgb);
    }

    RainParams sample_params = params;
    sample_params.seed = e.seed;
    RainySample s = make_sample(background, sample_params);

    const fs::path dir = fs::path(root) / split;
    write_png((dir / (e.id + "_rainy.png")).string(), s.rainy);
    write_png((dir / (e.id + "_bg.png")).string(), s.background);
    write_png((dir / (e.id + "_rain.png")).string(), s.rain);
    write_png((dir / (e.id + "_loc.png")).string(), s.location);
    index.entries.push_back(std::move(e));
  }

  nlohmann::json j;
  j["seed"] = index.seed;
  j["params"] = index.params;
  j["samples"] = nlohmann::json::array();
  for (const auto& e : index.entries)
    j["samples"].push_back({{"id", e.id}, {"split", e.split}, {"seed", e.seed}});
  std::ofstream out(fs::path(root) / "index.json");
  if (!out) throw std::runtime_error("build_dataset: cannot write index.json under " + root);
  out << j.dump(2) << "\n";
  return index;
}

inline DatasetIndex load_index(const std::string& root) {
  std::ifstream in(std::filesystem::path(root) / "index.json");
  if (!in) throw std::runtime_error("load_index: no index.json under " + root);
  nlohmann::json j;
  in >> j;
  DatasetIndex index;
  index.seed = j.at("seed").get<uint64_t>();
  index.params = j.at("params").get<RainParams>();
  for (const auto& js : j.at("samples")) {
    DatasetIndex::Entry e;
    e.id = js.at("id").get<std::string>();
    e.split = js.at("split").get<std::string>();
    e.seed = js.at("seed").get<uint64_t>();
    index.entries.push_back(std::move(e));
  }
  return index;
}

// Reads the four PNGs of one sample and re-checks the pairing contract:
// rainy = background + rain in every channel, and the location map is the
// thresholded rain layer. Catches stale or hand-edited files early.
inline RainySample load_sample(const std::string& root, const DatasetIndex::Entry& entry) {
  RainySample s;
  s.id = entry.id;
  s.rainy = read_png(detail::sample_path(root, entry, "rainy"));
  s.background = read_png(detail::sample_path(root, entry, "bg"));
  s.rain = read_png(detail::sample_path(root, entry, "rain"));
  s.location = read_png(detail::sample_path(root, entry, "loc"));
  if (s.rainy.c != 3 || s.background.c != 3 || s.rain.c != 1 || s.location.c != 1 ||
      !s.rainy.same_shape(s.background) || s.rain.h != s.rainy.h || s.rain.w != s.rainy.w ||
      !s.rain.same_shape(s.location))
    throw std::runtime_error("load_sample: inconsistent shapes for id " + entry.id);
  const int64_t hw = s.rainy.h * s.rainy.w;
  for (int64_t i = 0; i < hw; ++i) {
    for (int64_t ch = 0; ch < 3; ++ch) {
      const float diff = s.rainy.px[size_t(ch * hw + i)] - s.background.px[size_t(ch * hw + i)];
      if (std::abs(diff - s.rain.px[size_t(i)]) > 1e-6f)
        throw std::runtime_error("load_sample: rainy - background != rain for id " + entry.id);
    }
    const float want_loc = s.rain.px[size_t(i)] > kRainLocThreshold ? 1.0f : 0.0f;
    if (s.location.px[size_t(i)] != want_loc)
      throw std::runtime_error("load_sample: location map disagrees with rain for id " + entry.id);
  }
  return s;
}

inline std::vector<RainySample> load_split(const std::string& root, const DatasetIndex& index,
                                           const std::string& split) {
  std::vector<RainySample> out;
  for (const auto& e : index.split_entries(split)) out.push_back(load_sample(root, e));
  return out;
}

// Training minibatch: rainy input, clean target, and the rain-location mask
// (kept single-channel; the losses broadcast it over color channels).
struct Batch {
  Tensor rainy;       // [N,3,h,w]
  Tensor background;  // [N,3,h,w]
  Tensor location;    // [N,1,h,w]
};

// Which (sample, crop window) each batch row came from; the trainer quotes
// this when a step has to be aborted.
struct BatchMeta {
  std::vector<std::string> ids;
  std::vector<std::pair<int64_t, int64_t>> offsets;  // (y0, x0) per row

  std::string describe() const {
    std::string out;
    for (size_t n = 0; n < ids.size(); ++n) {
      if (n) out += ", ";
      out += ids[n] + "@(" + std::to_string(offsets[n].first) + "," +
             std::to_string(offsets[n].second) + ")";
    }
    return out;
  }
};

// Joint random crops: one (sample, y0, x0) triple per batch element, applied
// identically to all layers of that sample.
inline Batch sample_batch(const std::vector<RainySample>& samples, int64_t batch_size,
                          int64_t crop, Rng& rng, BatchMeta* meta = nullptr) {
  if (samples.empty()) throw std::invalid_argument("sample_batch: no samples");
  if (batch_size <= 0 || crop <= 0) throw std::invalid_argument("sample_batch: empty batch shape");
  Batch b;
  b.rainy = Tensor({batch_size, 3, crop, crop});
  b.background = Tensor({batch_size, 3, crop, crop});
  b.location = Tensor({batch_size, 1, crop, crop});
  for (int64_t n = 0; n < batch_size; ++n) {
    const auto& s = samples[size_t(rng.uniform_int(0, int64_t(samples.size()) - 1))];
    if (s.rainy.h < crop || s.rainy.w < crop)
      throw std::invalid_argument("sample_batch: sample " + s.id + " smaller than crop");
    const int64_t y0 = rng.uniform_int(0, s.rainy.h - crop);
    const int64_t x0 = rng.uniform_int(0, s.rainy.w - crop);
    if (meta) {
      meta->ids.push_back(s.id);
      meta->offsets.emplace_back(y0, x0);
    }
    const int64_t hw = s.rainy.h * s.rainy.w;
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < crop; ++y)
        for (int64_t x = 0; x < crop; ++x) {
          const size_t src = size_t(ch * hw + (y0 + y) * s.rainy.w + x0 + x);
          b.rainy.at(n, ch, y, x) = s.rainy.px[src];
          b.background.at(n, ch, y, x) = s.background.px[src];
        }
    for (int64_t y = 0; y < crop; ++y)
      for (int64_t x = 0; x < crop; ++x)
        b.location.at(n, 0, y, x) = s.location.px[size_t((y0 + y) * s.rainy.w + x0 + x)];
  }
  return b;
}

}  // namespace qsnet

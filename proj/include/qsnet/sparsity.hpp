#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsnet/filter_bank.hpp"
#include "qsnet/image.hpp"
#include "qsnet/png_io.hpp"

namespace qsnet {

// Slack for the chord test, in nats. A single Laplacian sits exactly on its
// chord, so classifying it as sparse requires a small positive tolerance
// against sampling noise.
constexpr double kChordEps = 0.1;

constexpr int kDefaultHistogramBins = 64;

// Log-occupancy histogram over |values|. The domain is clipped to the
// [0.1%, 99.9%] quantiles of the magnitudes and the overflow on either side
// is folded into the edge bins (winsorized), so the bin counts always sum to
// the sample count. Empty bins are dropped because their log is undefined.
struct LogHistogram {
  std::vector<double> bin_centers;  // strictly increasing, magnitude domain
  std::vector<double> log_counts;   // natural log of bin occupancy
  int64_t n_samples = 0;
};

inline LogHistogram log_histogram(const std::vector<double>& values, int n_bins) {
  if (values.empty()) throw std::invalid_argument("log_histogram: empty input");
  if (int64_t(values.size()) < 1000)
    throw std::invalid_argument("log_histogram: needs at least 1000 samples");
  if (n_bins < 16) throw std::invalid_argument("log_histogram: needs at least 16 bins");

  std::vector<double> mags(values.size());
  for (size_t i = 0; i < values.size(); ++i) mags[i] = std::abs(values[i]);
  std::sort(mags.begin(), mags.end());
  const auto quantile = [&mags](double q) {
    const double pos = q * double(mags.size() - 1);
    const size_t i = size_t(pos);
    const double frac = pos - double(i);
    return i + 1 < mags.size() ? mags[i] * (1 - frac) + mags[i + 1] * frac : mags[i];
  };
  const double lo = quantile(0.001), hi = quantile(0.999);

  LogHistogram h;
  h.n_samples = int64_t(values.size());
  if (hi - lo <= 0) {  // (near-)degenerate spread: everything in one bin
    h.bin_centers = {lo};
    h.log_counts = {std::log(double(values.size()))};
    return h;
  }

  const double width = (hi - lo) / double(n_bins);
  std::vector<int64_t> counts(size_t(n_bins), 0);
  for (double m : mags) {
    int64_t idx = int64_t(std::floor((m - lo) / width));
    idx = std::clamp<int64_t>(idx, 0, n_bins - 1);  // winsorize the tails
    ++counts[size_t(idx)];
  }
  for (int i = 0; i < n_bins; ++i) {
    if (counts[size_t(i)] == 0) continue;
    h.bin_centers.push_back(lo + (double(i) + 0.5) * width);
    h.log_counts.push_back(std::log(double(counts[size_t(i)])));
  }
  return h;
}

enum class Verdict { sparse, nonsparse };

struct ChordResult {
  Verdict verdict = Verdict::nonsparse;
  double max_chord_excess = 0.0;  // largest interior log-count above the chord
};

// Chord criterion: draw the line between the first and last nonempty bins of
// the log-histogram; the distribution is sparse when no interior bin rises
// more than eps above that line. Convex log-occupancy (heavier-than-Laplace
// tails) passes; concave (Gaussian-like) fails.
inline ChordResult chord_sparsity_test(const LogHistogram& h, double eps = kChordEps) {
  const size_t n = h.bin_centers.size();
  if (n < 3) throw std::invalid_argument("chord_sparsity_test: needs at least 3 nonempty bins");
  const double x0 = h.bin_centers.front(), y0 = h.log_counts.front();
  const double x1 = h.bin_centers.back(), y1 = h.log_counts.back();
  const double slope = (y1 - y0) / (x1 - x0);
  ChordResult r;
  r.max_chord_excess = -std::numeric_limits<double>::infinity();
  for (size_t i = 1; i + 1 < n; ++i) {
    const double chord = y0 + slope * (h.bin_centers[i] - x0);
    r.max_chord_excess = std::max(r.max_chord_excess, h.log_counts[i] - chord);
  }
  r.verdict = r.max_chord_excess <= eps ? Verdict::sparse : Verdict::nonsparse;
  return r;
}

// Maximum-likelihood scale of a zero-mean Laplacian: s = mean |x|. All-zero
// input yields s = 0, which callers must treat as degenerate.
inline double fit_laplacian(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("fit_laplacian: empty input");
  double acc = 0.0;
  for (double v : values) acc += std::abs(v);
  return acc / double(values.size());
}

struct MixtureFit {
  double pi1 = 0.5, s1 = 0.0;
  double pi2 = 0.5, s2 = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;            // all-zero input; no fit possible
  std::vector<double> ll_trace;       // per-iteration log-likelihood
};

// EM for a two-component zero-mean Laplacian mixture. Deterministic
// initialization (s1 = mean|x|/2, s2 = 2 mean|x|, equal priors); stops when
// the relative log-likelihood improvement drops below tol.
inline MixtureFit fit_two_laplacian_mixture(const std::vector<double>& values, int max_iter = 100,
                                            double tol = 1e-6) {
  if (int64_t(values.size()) < 10000)
    throw std::invalid_argument("fit_two_laplacian_mixture: needs at least 10000 samples");
  const size_t n = values.size();
  std::vector<double> mags(n);
  double mean_abs = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mags[i] = std::abs(values[i]);
    mean_abs += mags[i];
  }
  mean_abs /= double(n);

  MixtureFit fit;
  if (mean_abs <= 0.0) {
    fit.degenerate = true;
    return fit;
  }
  fit.pi1 = fit.pi2 = 0.5;
  fit.s1 = 0.5 * mean_abs;
  fit.s2 = 2.0 * mean_abs;

  const double floor_s = 1e-12 * mean_abs;
  double prev_ll = -std::numeric_limits<double>::infinity();
  std::vector<double> r1(n);
  for (int it = 1; it <= max_iter; ++it) {
    // E-step in log space for stability.
    const double la1 = std::log(fit.pi1) - std::log(2.0 * fit.s1);
    const double la2 = std::log(fit.pi2) - std::log(2.0 * fit.s2);
    double ll = 0.0, sum_r1 = 0.0, sum_r1m = 0.0, sum_m = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double l1 = la1 - mags[i] / fit.s1;
      const double l2 = la2 - mags[i] / fit.s2;
      const double m = std::max(l1, l2);
      const double z = m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
      ll += z;
      r1[i] = std::exp(l1 - z);
      sum_r1 += r1[i];
      sum_r1m += r1[i] * mags[i];
      sum_m += mags[i];
    }
    fit.log_likelihood = ll;
    fit.ll_trace.push_back(ll);
    fit.iterations = it;

    // M-step.
    const double n1 = std::max(sum_r1, 1e-12);
    const double n2 = std::max(double(n) - sum_r1, 1e-12);
    fit.pi1 = sum_r1 / double(n);
    fit.pi2 = 1.0 - fit.pi1;
    fit.s1 = std::max(sum_r1m / n1, floor_s);
    fit.s2 = std::max((sum_m - sum_r1m) / n2, floor_s);

    if (std::isfinite(prev_ll) && ll - prev_ll < tol * (std::abs(prev_ll) + 1.0)) {
      fit.converged = true;
      break;
    }
    prev_ll = ll;
  }
  return fit;
}

struct SparsityReport {
  Verdict verdict = Verdict::nonsparse;
  double max_chord_excess = 0.0;
  double laplacian_scale = 0.0;
  double pi1 = 0.0, s1 = 0.0, pi2 = 0.0, s2 = 0.0;
  bool degenerate = false;  // too little spread for the chord test
};

// Full per-signal analysis: histogram + chord verdict + Laplacian and
// mixture fits. Signals without enough distinct magnitudes (e.g. an all-zero
// rain prediction) come back flagged degenerate and nonsparse rather than
// throwing.
inline SparsityReport analyze_values(const std::vector<double>& values,
                                     int n_bins = kDefaultHistogramBins,
                                     double eps = kChordEps, bool fit_mixture = true) {
  SparsityReport rep;
  rep.laplacian_scale = fit_laplacian(values);
  const LogHistogram h = log_histogram(values, n_bins);
  if (h.bin_centers.size() < 3) {
    rep.degenerate = true;
    return rep;
  }
  const ChordResult chord = chord_sparsity_test(h, eps);
  rep.verdict = chord.verdict;
  rep.max_chord_excess = chord.max_chord_excess;
  if (fit_mixture && rep.laplacian_scale > 0 && values.size() >= 10000) {
    const MixtureFit fit = fit_two_laplacian_mixture(values);
    rep.pi1 = fit.pi1;
    rep.s1 = fit.s1;
    rep.pi2 = fit.pi2;
    rep.s2 = fit.s2;
  }
  return rep;
}

// Pools the responses of the whole derivative-filter bank over every channel
// of an image into one flat sample set.
inline std::vector<double> filter_responses(const Image& img) {
  const std::vector<float> planes = filter_bank_planes(img.px.data(), img.c, img.h, img.w);
  return std::vector<double>(planes.begin(), planes.end());
}

struct ImageSparsity {
  std::string path;
  SparsityReport report;
};

struct CorpusStats {
  double fraction_sparse = 0.0;
  std::vector<ImageSparsity> reports;
  std::vector<std::string> skipped;  // unreadable inputs, counted but not scored
};

inline CorpusStats corpus_sparsity_statistics(const std::vector<std::string>& paths,
                                              int n_bins = kDefaultHistogramBins,
                                              double eps = kChordEps, bool fit_mixture = true) {
  if (paths.empty()) throw std::invalid_argument("corpus_sparsity_statistics: no images");
  CorpusStats stats;
  int64_t sparse = 0;
  for (const auto& path : paths) {
    Image img;
    try {
      img = read_png(path);
    } catch (const std::exception&) {
      stats.skipped.push_back(path);
      continue;
    }
    ImageSparsity row;
    row.path = path;
    row.report = analyze_values(filter_responses(img), n_bins, eps, fit_mixture);
    if (!row.report.degenerate && row.report.verdict == Verdict::sparse) ++sparse;
    stats.reports.push_back(std::move(row));
  }
  if (!stats.reports.empty()) stats.fraction_sparse = double(sparse) / double(stats.reports.size());
  return stats;
}

inline void write_sparsity_csv(const std::string& path, const CorpusStats& stats) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sparsity_csv: cannot open " + path);
  out << "path,verdict,max_chord_excess,degenerate,s,pi1,s1,pi2,s2\n";
  char buf[256];
  for (const auto& row : stats.reports) {
    std::snprintf(buf, sizeof(buf), ",%s,%.9g,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  row.report.degenerate ? "degenerate"
                  : row.report.verdict == Verdict::sparse ? "sparse"
                                                          : "nonsparse",
                  row.report.max_chord_excess, int(row.report.degenerate),
                  row.report.laplacian_scale, row.report.pi1, row.report.s1, row.report.pi2,
                  row.report.s2);
    out << row.path << buf;
  }
  for (const auto& path_skipped : stats.skipped) out << path_skipped << ",skipped,,,,,,,\n";
}

}  // namespace qsnet

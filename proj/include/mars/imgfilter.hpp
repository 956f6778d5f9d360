#pragma once

// Multi-stage image-quality gating: size -> grayscale -> dedup -> sharpness
// -> histogram. Gates short-circuit on first failure; deduplication is a
// sequential greedy reduction over the surviving ordered set.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mars/image.hpp"

namespace mars {

struct PerceptualHash {
  uint64_t bits = 0;
  std::string algorithm = "dhash64";
};

inline int hamming_distance(const PerceptualHash& a, const PerceptualHash& b) {
  return std::popcount(a.bits ^ b.bits);
}

struct GateResult {
  std::string gate;
  bool pass = true;
  double statistic = 0.0;
};

struct QualityReport {
  std::string image_id;
  std::vector<GateResult> gate_results;
  bool keep = true;
  std::string reject_reason;  // failing gate name, or an i/o error note
};

struct FilterThresholds {
  int min_dim = 64;
  long min_bytes = 4096;
  double grayscale_var = 4.0;    // mean inter-channel variance, 0-255 scale
  int max_hamming = 8;
  double lap_var = 25.0;         // Laplacian variance
  double spike_bound = 0.5;      // max fraction of pixels in one histogram bin
  double entropy_min = 1.0;      // bits
  double entropy_max = 7.9;
};

inline bool size_gate(int width, int height, long file_bytes, int min_dim, long min_bytes) {
  return std::min(width, height) >= min_dim && file_bytes >= min_bytes;
}

// Mean over pixels of the variance across (R,G,B).
inline std::pair<bool, double> grayscale_gate(const Image& img, double var_threshold) {
  if (img.empty()) throw NotThreeChannel("grayscale_gate: empty image");
  double acc = 0.0;
  const size_t n = static_cast<size_t>(img.width) * img.height;
  for (size_t i = 0; i < n; ++i) {
    const uint8_t* p = img.data.data() + 3 * i;
    const double mean = (p[0] + p[1] + p[2]) / 3.0;
    double var = 0.0;
    for (int c = 0; c < 3; ++c) var += (p[c] - mean) * (p[c] - mean);
    acc += var / 3.0;
  }
  const double stat = acc / static_cast<double>(n);
  return {stat >= var_threshold, stat};
}

// 64-bit difference hash: area-downscale luminance to 9x8, bit j set iff
// pixel[j] < pixel[j+1] row-wise. Invariant under monotone brightness maps.
inline PerceptualHash perceptual_hash(const Image& img) {
  if (img.empty()) throw DecodeError("perceptual_hash: empty image");
  const FloatImage small = resize_area(luminance_image(img), 9, 8);
  PerceptualHash h;
  int bit = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x, ++bit)
      if (small.at(x, y) < small.at(x + 1, y)) h.bits |= (1ull << bit);
  return h;
}

// Greedy first-wins scan: an entry is rejected iff it is within max_hamming
// of an already-kept entry. Returns kept indices in input order.
inline std::vector<size_t> dedup(const std::vector<PerceptualHash>& hashes, int max_hamming) {
  std::vector<size_t> kept;
  for (size_t i = 0; i < hashes.size(); ++i) {
    bool duplicate = false;
    for (size_t k : kept)
      if (hamming_distance(hashes[i], hashes[k]) <= max_hamming) {
        duplicate = true;
        break;
      }
    if (!duplicate) kept.push_back(i);
  }
  return kept;
}

// Variance of the 3x3 Laplacian (center 4, cross -1, corners 0) over interior
// pixels of the luminance image.
inline std::pair<bool, double> sharpness_gate(const Image& img, double lap_var_threshold) {
  if (img.width < 3 || img.height < 3)
    throw TooSmall("sharpness_gate: image smaller than 3x3");
  const FloatImage lum = luminance_image(img);
  double sum = 0.0, sum2 = 0.0;
  size_t n = 0;
  for (int y = 1; y < img.height - 1; ++y)
    for (int x = 1; x < img.width - 1; ++x) {
      const double r = 4.0 * lum.at(x, y) - lum.at(x - 1, y) - lum.at(x + 1, y) -
                       lum.at(x, y - 1) - lum.at(x, y + 1);
      sum += r;
      sum2 += r * r;
      ++n;
    }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  return {var >= lap_var_threshold, var};
}

struct HistogramStats {
  double max_bin_fraction = 0.0;
  double entropy_bits = 0.0;
};

// 256-bin luminance histogram: fails on a dominant spike or on entropy
// outside the flatness bounds.
inline std::pair<bool, HistogramStats> histogram_gate(const Image& img, double entropy_min,
                                                      double entropy_max, double spike_bound) {
  std::vector<double> hist(256, 0.0);
  const size_t n = static_cast<size_t>(img.width) * img.height;
  for (size_t i = 0; i < n; ++i) {
    const uint8_t* p = img.data.data() + 3 * i;
    int bin = static_cast<int>(luminance(p[0], p[1], p[2]));
    hist[std::clamp(bin, 0, 255)] += 1.0;
  }
  HistogramStats stats;
  for (double& b : hist) {
    b /= static_cast<double>(n);
    stats.max_bin_fraction = std::max(stats.max_bin_fraction, b);
    if (b > 0.0) stats.entropy_bits -= b * std::log2(b);
  }
  const bool pass = stats.max_bin_fraction <= spike_bound &&
                    stats.entropy_bits >= entropy_min && stats.entropy_bits <= entropy_max;
  return {pass, stats};
}

// ---------------------------------------------------------------------------
// Pipeline

namespace detail {

inline long file_size_bytes(const std::string& path) {
  std::error_code ec;
  const auto sz = std::filesystem::file_size(path, ec);
  return ec ? -1 : static_cast<long>(sz);
}

}  // namespace detail

// Runs all gates over a manifest of image paths. Per-image I/O errors are
// recorded in the report and never abort the batch.
inline std::vector<QualityReport> run_filter_pipeline(const std::vector<std::string>& paths,
                                                      const FilterThresholds& t = {}) {
  std::vector<QualityReport> reports(paths.size());
  std::vector<Image> images(paths.size());
  std::vector<bool> alive(paths.size(), false);

  // Gates 1-2: size and grayscale, per image.
  for (size_t i = 0; i < paths.size(); ++i) {
    QualityReport& rep = reports[i];
    rep.image_id = paths[i];
    try {
      images[i] = read_png(paths[i]);
    } catch (const Error& e) {
      rep.keep = false;
      rep.reject_reason = std::string("io: ") + e.what();
      continue;
    }
    const long bytes = detail::file_size_bytes(paths[i]);
    const bool size_ok = size_gate(images[i].width, images[i].height, bytes, t.min_dim, t.min_bytes);
    rep.gate_results.push_back({"size", size_ok, static_cast<double>(std::min(images[i].width, images[i].height))});
    if (!size_ok) {
      rep.keep = false;
      rep.reject_reason = "size";
      continue;
    }
    auto [gray_ok, var] = grayscale_gate(images[i], t.grayscale_var);
    rep.gate_results.push_back({"grayscale", gray_ok, var});
    if (!gray_ok) {
      rep.keep = false;
      rep.reject_reason = "grayscale";
      continue;
    }
    alive[i] = true;
  }

  // Gate 3: dedup over survivors, in input order.
  std::vector<size_t> survivor_ids;
  std::vector<PerceptualHash> hashes;
  for (size_t i = 0; i < paths.size(); ++i)
    if (alive[i]) {
      survivor_ids.push_back(i);
      hashes.push_back(perceptual_hash(images[i]));
    }
  std::vector<bool> kept_after_dedup(paths.size(), false);
  for (size_t k : dedup(hashes, t.max_hamming)) kept_after_dedup[survivor_ids[k]] = true;
  for (size_t i : survivor_ids) {
    const bool ok = kept_after_dedup[i];
    reports[i].gate_results.push_back({"dedup", ok, 0.0});
    if (!ok) {
      reports[i].keep = false;
      reports[i].reject_reason = "dedup";
      alive[i] = false;
    }
  }

  // Gates 4-5: sharpness and histogram.
  for (size_t i = 0; i < paths.size(); ++i) {
    if (!alive[i]) continue;
    QualityReport& rep = reports[i];
    auto [sharp_ok, lap_var] = sharpness_gate(images[i], t.lap_var);
    rep.gate_results.push_back({"sharpness", sharp_ok, lap_var});
    if (!sharp_ok) {
      rep.keep = false;
      rep.reject_reason = "sharpness";
      continue;
    }
    auto [hist_ok, stats] = histogram_gate(images[i], t.entropy_min, t.entropy_max, t.spike_bound);
    rep.gate_results.push_back({"histogram", hist_ok, stats.entropy_bits});
    if (!hist_ok) {
      rep.keep = false;
      rep.reject_reason = "histogram";
    }
  }
  return reports;
}

inline std::vector<std::string> read_manifest_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// Report schema: tab-separated `image_id  verdict  failing_gate  gate=stat;...`
inline void write_filter_report(const std::string& path,
                                const std::vector<QualityReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# image_id\tverdict\tfailing_gate\tstatistics\n";
  for (const QualityReport& rep : reports) {
    out << rep.image_id << "\t" << (rep.keep ? "keep" : "reject") << "\t"
        << (rep.keep ? "-" : rep.reject_reason) << "\t";
    for (size_t i = 0; i < rep.gate_results.size(); ++i) {
      const GateResult& g = rep.gate_results[i];
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s=%.6g", g.gate.c_str(), g.statistic);
      out << (i ? ";" : "") << buf;
    }
    out << "\n";
  }
}

}  // namespace mars

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pad/stats.hpp"
#include "pad/tensor.hpp"

namespace pad::diag {

// ---------------------------------------------------------------------------
// records
// ---------------------------------------------------------------------------

/// One co-registered image pair. rgb is [3,H,W] (color) or [1,H,W] (already
/// gray); sar is [1,H,W]; mask, when defined, is [1,H,W] of {0,1} with 1
/// marking valid pixels.
struct PairRecord {
  Tensor rgb;
  Tensor sar;
  Tensor mask;  // undefined tensor = no mask
  std::string id;
};

/// Distribution summary of one set of spectral-difference values. When the
/// input is constant the normality test is undefined: degenerate is set and
/// shapiro_w/shapiro_p/skewness/excess_kurtosis are reported as 0.
struct StatBlock {
  double shapiro_w = 0.0;
  double shapiro_p = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  std::size_t n = 0;
  bool degenerate = false;
};

/// Dataset-level spectral difference report: elementwise mean maps over all
/// pairs plus distribution statistics of the mean phase-difference map,
/// split by frequency band.
struct DiffReport {
  Tensor rsd_map;   // [1,H,W]    spatial relative difference
  Tensor rad_map;   // [1,H,W_h]  relative amplitude difference
  Tensor appd_map;  // [1,H,W_h]  absolute phase difference, values in [0,pi]
  StatBlock lf_stats;
  StatBlock hf_stats;
  StatBlock all_stats;
  std::size_t n_pairs = 0;
  double eps = 1e-8;
  double lf_radius_fraction = 0.5;
};

// ---------------------------------------------------------------------------
// per-pair metrics
// ---------------------------------------------------------------------------

/// 0.299 R + 0.587 G + 0.114 B. Requires exactly 3 channels.
Tensor to_grayscale(const Tensor& rgb);

/// Spatial relative difference |sar - gray| / (gray + eps), eps > 0.
Tensor rsd_pair(const Tensor& sar, const Tensor& rgb_gray, double eps);

/// Relative amplitude difference of the shifted half spectra.
Tensor rad_pair(const Tensor& sar, const Tensor& rgb_gray, double eps);

/// Absolute wrapped phase difference per spectral bin, in [0, pi]; a
/// difference of exactly 2*pi maps to exactly 0.
Tensor appd_pair(const Tensor& sar, const Tensor& rgb_gray);

/// The wrap-and-magnitude core of appd_pair on raw phase grids, exposed so
/// constructed phase inputs (outside [-pi,pi)) can be tested directly.
Tensor appd_from_phases(const Tensor& phase_a, const Tensor& phase_b);

/// All three metric maps of one pair (gray conversion applied if needed).
struct PairMetrics {
  Tensor rsd;
  Tensor rad;
  Tensor appd;
};
PairMetrics pair_metrics(const PairRecord& pair, double eps);

// ---------------------------------------------------------------------------
// aggregation and statistics
// ---------------------------------------------------------------------------

/// Elementwise arithmetic mean in input order. Nonempty, uniform shapes.
Tensor aggregate(const std::vector<Tensor>& maps);

/// Split half-spectrum bins by normalized radial distance from the shifted
/// low-frequency center: distance <= fraction -> lf, otherwise hf; all is
/// every bin in row-major order. fraction must lie in (0, 1).
struct BandValues {
  std::vector<double> lf;
  std::vector<double> hf;
  std::vector<double> all;
};
BandValues band_partition(const Tensor& map, double lf_radius_fraction);

/// Distribution summary; the normality test runs on a seeded uniform
/// subsample of at most subsample_cap values, moments use the full sample.
StatBlock stat_block(const std::vector<double>& values, std::size_t subsample_cap,
                     std::uint64_t seed);

/// Mean map value per radial-distance band, for plot-ready profiles.
struct RadialBin {
  double dist_lo = 0.0;
  double dist_hi = 0.0;
  std::size_t count = 0;
  double mean = 0.0;
};
std::vector<RadialBin> radial_profile(const Tensor& map, std::size_t nbins);

// ---------------------------------------------------------------------------
// dataset-level analyses
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  double eps = 1e-8;
  double lf_radius_fraction = 0.5;
  std::size_t subsample_cap = 5000;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
};

/// Per-pair metrics (optionally computed by a worker pool; results land in
/// per-pair slots, so output is deterministic), aggregated in input order,
/// with band statistics of the mean phase-difference map.
DiffReport analyze(const std::vector<PairRecord>& pairs, const AnalyzeOptions& opts);

/// Block area-average by the integer factor nearest to 1/rate. rate in
/// (0, 1]; requires rate * min(H, W) >= 4.
Tensor downsample(const Tensor& img, double rate);

/// Metric trajectories across sampling rates: scalar mean and population
/// variance over all bins of the aggregated maps, one row per rate.
struct SweepPoint {
  double rate = 1.0;
  double rsd_mean = 0.0, rsd_var = 0.0;
  double rad_mean = 0.0, rad_var = 0.0;
  double appd_mean = 0.0, appd_var = 0.0;
};
std::vector<SweepPoint> downsample_sweep(const std::vector<PairRecord>& pairs,
                                         const std::vector<double>& rates,
                                         double eps, double lf_radius_fraction);

/// Metrics computed on the full frame ("included") versus on the largest
/// valid rectangle of the mask ("excluded"). Requires a defined mask with at
/// least one valid pixel.
struct MaskedOut {
  PairMetrics included;
  PairMetrics excluded;
};
MaskedOut masked_diff(const PairRecord& pair, double eps);

/// The tight bounding box of mask==1, shrunk to the largest axis-aligned
/// all-valid rectangle if the box contains invalid pixels. Exposed for the
/// crop oracle in tests. Returns {row0, col0, height, width}.
struct CropRect {
  std::size_t row0 = 0, col0 = 0, height = 0, width = 0;
};
CropRect valid_rectangle(const Tensor& mask);

/// Per-pixel mean^2 / population variance over an odd square window with
/// replicate-padded borders; windows with variance < 1e-12 are capped at
/// 1e6. A speckle field with L looks has ENL ~= L.
Tensor enl_map(const Tensor& img, std::size_t window);

using stats::Correlation;
using stats::correlation;

// ---------------------------------------------------------------------------
// manifests
// ---------------------------------------------------------------------------

/// One line of a pair-list CSV: id,rgb,sar[,mask] with paths resolved
/// relative to the manifest's directory. A leading "id,rgb,sar..." header
/// is skipped.
struct ManifestRow {
  std::string id;
  std::string rgb_path;
  std::string sar_path;
  std::string mask_path;  // empty = no mask
};
std::vector<ManifestRow> read_manifest(const std::string& path);

/// Load images for one manifest row. Mask pixels > 0.5 become 1, else 0.
PairRecord load_pair(const ManifestRow& row);

}  // namespace pad::diag

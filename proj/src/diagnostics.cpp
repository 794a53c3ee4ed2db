#include "pad/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "pad/error.hpp"
#include "pad/fusion.hpp"
#include "pad/image_io.hpp"
#include "pad/rng.hpp"
#include "pad/spectral.hpp"

namespace pad::diag {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void require_plane(const char* who, const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 1) {
    throw ShapeError(std::string(who) + " expects [1, H, W], got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const char* who, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": mismatched shapes " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor relative_diff(const Tensor& a, const Tensor& b, double eps, const char* who) {
  require_same_shape(who, a, b);
  if (!(eps > 0.0)) throw ValueError(std::string(who) + ": eps must be positive");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::abs(a[i] - b[i]) / (b[i] + eps);
  }
  return Tensor(a.shape(), std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// per-pair metrics
// ---------------------------------------------------------------------------

Tensor to_grayscale(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("to_grayscale expects [3, H, W], got " + shape_str(rgb.shape()));
  }
  const std::size_t hw = rgb.dim(1) * rgb.dim(2);
  std::vector<double> v(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    v[i] = 0.299 * rgb[i] + 0.587 * rgb[hw + i] + 0.114 * rgb[2 * hw + i];
  }
  return Tensor({1, rgb.dim(1), rgb.dim(2)}, std::move(v));
}

Tensor rsd_pair(const Tensor& sar, const Tensor& rgb_gray, double eps) {
  require_plane("rsd_pair", sar);
  return relative_diff(sar, rgb_gray, eps, "rsd_pair");
}

Tensor rad_pair(const Tensor& sar, const Tensor& rgb_gray, double eps) {
  require_plane("rad_pair", sar);
  require_same_shape("rad_pair", sar, rgb_gray);
  if (!(eps > 0.0)) throw ValueError("rad_pair: eps must be positive");
  const Tensor amp_s = spectral::fd(nullptr, sar).amp;
  const Tensor amp_r = spectral::fd(nullptr, rgb_gray).amp;
  return relative_diff(amp_s, amp_r, eps, "rad_pair");
}

Tensor appd_from_phases(const Tensor& phase_a, const Tensor& phase_b) {
  require_same_shape("appd_from_phases", phase_a, phase_b);
  std::vector<double> v(phase_a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = phase_a[i] - phase_b[i];
    // wrap to (-pi, pi]: a difference of exactly 2*pi cancels to exactly 0
    const double r = d - kTwoPi * std::round(d / kTwoPi);
    v[i] = std::abs(r);
  }
  return Tensor(phase_a.shape(), std::move(v));
}

Tensor appd_pair(const Tensor& sar, const Tensor& rgb_gray) {
  require_plane("appd_pair", sar);
  require_same_shape("appd_pair", sar, rgb_gray);
  const Tensor ph_s = spectral::fd(nullptr, sar).phase;
  const Tensor ph_r = spectral::fd(nullptr, rgb_gray).phase;
  return appd_from_phases(ph_s, ph_r);
}

PairMetrics pair_metrics(const PairRecord& pair, double eps) {
  require_plane("pair_metrics (sar)", pair.sar);
  Tensor gray;
  if (pair.rgb.rank() == 3 && pair.rgb.dim(0) == 3) {
    gray = to_grayscale(pair.rgb);
  } else {
    require_plane("pair_metrics (rgb)", pair.rgb);
    gray = pair.rgb;
  }
  require_same_shape("pair_metrics", pair.sar, gray);
  PairMetrics m;
  m.rsd = rsd_pair(pair.sar, gray, eps);
  m.rad = rad_pair(pair.sar, gray, eps);
  m.appd = appd_pair(pair.sar, gray);
  return m;
}

// ---------------------------------------------------------------------------
// aggregation and statistics
// ---------------------------------------------------------------------------

Tensor aggregate(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw ValueError("aggregate: empty input");
  for (const Tensor& m : maps) require_same_shape("aggregate", maps.front(), m);
  std::vector<double> v(maps.front().numel(), 0.0);
  for (const Tensor& m : maps) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += m[i];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (double& x : v) x *= inv;
  return Tensor(maps.front().shape(), std::move(v));
}

BandValues band_partition(const Tensor& map, double lf_radius_fraction) {
  require_plane("band_partition", map);
  if (!(lf_radius_fraction > 0.0 && lf_radius_fraction < 1.0)) {
    throw ValueError("band_partition: fraction must lie in (0, 1)");
  }
  const Tensor dist = fusion::radial_dist(map.dim(1), map.dim(2));
  BandValues out;
  out.all.reserve(map.numel());
  for (std::size_t i = 0; i < map.numel(); ++i) {
    out.all.push_back(map[i]);
    if (dist[i] <= lf_radius_fraction) {
      out.lf.push_back(map[i]);
    } else {
      out.hf.push_back(map[i]);
    }
  }
  return out;
}

StatBlock stat_block(const std::vector<double>& values, std::size_t subsample_cap,
                     std::uint64_t seed) {
  if (subsample_cap < 3) throw ValueError("stat_block: subsample cap below 3");
  if (std::min(values.size(), subsample_cap) < 3) {
    throw ValueError("stat_block: need at least 3 values");
  }
  StatBlock b;
  b.n = values.size();
  b.mean = stats::mean(values);
  b.variance = stats::variance(values);

  const bool constant =
      std::all_of(values.begin(), values.end(),
                  [&](double v) { return v == values.front(); });
  if (constant) {
    b.degenerate = true;
    std::cerr << "stat_block: constant input, normality test skipped\n";
    return b;
  }
  b.skewness = stats::skewness(values);
  b.excess_kurtosis = stats::excess_kurtosis(values);

  std::vector<double> sample;
  if (values.size() <= subsample_cap) {
    sample = values;
  } else {
    // seeded partial Fisher-Yates: the first subsample_cap entries of a
    // uniform random permutation
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    sample.reserve(subsample_cap);
    for (std::size_t i = 0; i < subsample_cap; ++i) {
      const std::size_t j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
      sample.push_back(values[idx[i]]);
    }
  }
  // the subsample of a non-constant pool can still be constant
  const bool sample_constant =
      std::all_of(sample.begin(), sample.end(),
                  [&](double v) { return v == sample.front(); });
  if (sample_constant) {
    b.degenerate = true;
    std::cerr << "stat_block: constant subsample, normality test skipped\n";
    return b;
  }
  const stats::SwResult sw = stats::shapiro_wilk(std::move(sample));
  b.shapiro_w = sw.w;
  b.shapiro_p = sw.p;
  return b;
}

std::vector<RadialBin> radial_profile(const Tensor& map, std::size_t nbins) {
  require_plane("radial_profile", map);
  if (nbins == 0) throw ValueError("radial_profile: need at least one bin");
  const Tensor dist = fusion::radial_dist(map.dim(1), map.dim(2));
  std::vector<RadialBin> bins(nbins);
  std::vector<double> sums(nbins, 0.0);
  for (std::size_t k = 0; k < nbins; ++k) {
    bins[k].dist_lo = static_cast<double>(k) / static_cast<double>(nbins);
    bins[k].dist_hi = static_cast<double>(k + 1) / static_cast<double>(nbins);
  }
  for (std::size_t i = 0; i < map.numel(); ++i) {
    std::size_t k = static_cast<std::size_t>(dist[i] * static_cast<double>(nbins));
    if (k >= nbins) k = nbins - 1;  // dist == 1 joins the last bin
    bins[k].count++;
    sums[k] += map[i];
  }
  for (std::size_t k = 0; k < nbins; ++k) {
    bins[k].mean = bins[k].count ? sums[k] / static_cast<double>(bins[k].count) : 0.0;
  }
  return bins;
}

// ---------------------------------------------------------------------------
// dataset-level analyses
// ---------------------------------------------------------------------------

DiffReport analyze(const std::vector<PairRecord>& pairs, const AnalyzeOptions& opts) {
  if (pairs.empty()) throw ValueError("analyze: no pairs");
  std::vector<PairMetrics> rows(pairs.size());

  const std::size_t threads =
      std::max<std::size_t>(1, std::min(opts.threads, pairs.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      rows[i] = pair_metrics(pairs[i], opts.eps);
    }
  } else {
    // slot-per-pair pool: completion order cannot affect the result
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex error_mu;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= pairs.size() || failed.load()) return;
          try {
            rows[i] = pair_metrics(pairs[i], opts.eps);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(error_mu);
            failed.store(true);
            if (error.empty()) error = e.what();
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failed.load()) throw ShapeError("analyze: " + error);
  }

  std::vector<Tensor> rsd, rad, appd;
  for (const PairMetrics& m : rows) {
    rsd.push_back(m.rsd);
    rad.push_back(m.rad);
    appd.push_back(m.appd);
  }
  DiffReport rep;
  rep.rsd_map = aggregate(rsd);
  rep.rad_map = aggregate(rad);
  rep.appd_map = aggregate(appd);
  rep.n_pairs = pairs.size();
  rep.eps = opts.eps;
  rep.lf_radius_fraction = opts.lf_radius_fraction;

  const BandValues bands = band_partition(rep.appd_map, opts.lf_radius_fraction);
  rep.all_stats = stat_block(bands.all, opts.subsample_cap, opts.seed);
  rep.lf_stats = stat_block(bands.lf, opts.subsample_cap, opts.seed + 1);
  rep.hf_stats = stat_block(bands.hf, opts.subsample_cap, opts.seed + 2);
  return rep;
}

Tensor downsample(const Tensor& img, double rate) {
  require_plane("downsample", img);
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw ValueError("downsample: rate must lie in (0, 1]");
  }
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (rate * static_cast<double>(std::min(h, w)) < 4.0) {
    throw ValueError("downsample: rate too small for image size");
  }
  const auto k = static_cast<std::size_t>(std::lround(1.0 / rate));
  if (k <= 1) return img;
  const std::size_t h2 = h / k, w2 = w / k;
  std::vector<double> v(h2 * w2, 0.0);
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t y = 0; y < h2; ++y) {
    for (std::size_t x = 0; x < w2; ++x) {
      double acc = 0.0;
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          acc += img[(y * k + dy) * w + (x * k + dx)];
        }
      }
      v[y * w2 + x] = acc * inv;
    }
  }
  return Tensor({1, h2, w2}, std::move(v));
}

namespace {

void scalar_stats(const std::vector<Tensor>& maps, double& mean_out, double& var_out) {
  std::vector<double> pool;
  for (const Tensor& m : maps) {
    pool.insert(pool.end(), m.data().begin(), m.data().end());
  }
  mean_out = stats::mean(pool);
  var_out = stats::variance(pool);
}

}  // namespace

std::vector<SweepPoint> downsample_sweep(const std::vector<PairRecord>& pairs,
                                         const std::vector<double>& rates,
                                         double eps, double lf_radius_fraction) {
  if (pairs.empty()) throw ValueError("downsample_sweep: no pairs");
  if (rates.empty()) throw ValueError("downsample_sweep: no rates");
  if (!(lf_radius_fraction > 0.0 && lf_radius_fraction < 1.0)) {
    throw ValueError("downsample_sweep: fraction must lie in (0, 1)");
  }
  std::vector<SweepPoint> out;
  for (double rate : rates) {
    std::vector<Tensor> rsd, rad, appd;
    for (const PairRecord& pr : pairs) {
      PairRecord small;
      small.id = pr.id;
      Tensor gray = (pr.rgb.rank() == 3 && pr.rgb.dim(0) == 3)
                        ? to_grayscale(pr.rgb)
                        : pr.rgb;
      small.rgb = downsample(gray, rate);
      small.sar = downsample(pr.sar, rate);
      PairMetrics m = pair_metrics(small, eps);
      rsd.push_back(m.rsd);
      rad.push_back(m.rad);
      appd.push_back(m.appd);
    }
    SweepPoint p;
    p.rate = rate;
    scalar_stats(rsd, p.rsd_mean, p.rsd_var);
    scalar_stats(rad, p.rad_mean, p.rad_var);
    scalar_stats(appd, p.appd_mean, p.appd_var);
    out.push_back(p);
  }
  return out;
}

CropRect valid_rectangle(const Tensor& mask) {
  require_plane("valid_rectangle", mask);
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  const auto valid = [&](std::size_t y, std::size_t x) {
    return mask[y * w + x] != 0.0;
  };
  std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (valid(y, x)) {
        r0 = std::min(r0, y);
        r1 = std::max(r1, y);
        c0 = std::min(c0, x);
        c1 = std::max(c1, x);
      }
    }
  }
  if (r0 == h) throw ValueError("valid_rectangle: mask has no valid pixels");

  bool box_clean = true;
  for (std::size_t y = r0; y <= r1 && box_clean; ++y) {
    for (std::size_t x = c0; x <= c1; ++x) {
      if (!valid(y, x)) {
        box_clean = false;
        break;
      }
    }
  }
  if (box_clean) return {r0, c0, r1 - r0 + 1, c1 - c0 + 1};

  // Largest all-valid rectangle: maximal rectangle under a histogram per
  // row (stack of rising column heights).
  std::vector<std::size_t> height(w, 0);
  CropRect best{0, 0, 0, 0};
  std::size_t best_area = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      height[x] = valid(y, x) ? height[x] + 1 : 0;
    }
    std::vector<std::size_t> stack;  // indices with increasing heights
    for (std::size_t x = 0; x <= w; ++x) {
      const std::size_t cur = x < w ? height[x] : 0;
      std::size_t left = x;
      while (!stack.empty() && height[stack.back()] >= cur) {
        const std::size_t idx = stack.back();
        stack.pop_back();
        const std::size_t hh = height[idx];
        left = stack.empty() ? 0 : stack.back() + 1;
        const std::size_t area = hh * (x - left);
        if (area > best_area) {
          best_area = area;
          best = {y + 1 - hh, left, hh, x - left};
        }
      }
      stack.push_back(x);
    }
  }
  return best;
}

namespace {

Tensor crop(const Tensor& img, const CropRect& r) {
  const std::size_t w = img.dim(2);
  std::vector<double> v(r.height * r.width);
  for (std::size_t y = 0; y < r.height; ++y) {
    for (std::size_t x = 0; x < r.width; ++x) {
      v[y * r.width + x] = img[(r.row0 + y) * w + (r.col0 + x)];
    }
  }
  return Tensor({1, r.height, r.width}, std::move(v));
}

}  // namespace

MaskedOut masked_diff(const PairRecord& pair, double eps) {
  if (!pair.mask.defined()) throw ValueError("masked_diff: pair has no mask");
  require_plane("masked_diff", pair.mask);
  Tensor gray = (pair.rgb.rank() == 3 && pair.rgb.dim(0) == 3)
                    ? to_grayscale(pair.rgb)
                    : pair.rgb;
  require_same_shape("masked_diff", pair.sar, gray);
  require_same_shape("masked_diff", pair.sar, pair.mask);

  MaskedOut out;
  PairRecord full;
  full.rgb = gray;
  full.sar = pair.sar;
  full.id = pair.id;
  out.included = pair_metrics(full, eps);

  const CropRect r = valid_rectangle(pair.mask);
  PairRecord cut;
  cut.rgb = crop(gray, r);
  cut.sar = crop(pair.sar, r);
  cut.id = pair.id;
  out.excluded = pair_metrics(cut, eps);
  return out;
}

Tensor enl_map(const Tensor& img, std::size_t window) {
  require_plane("enl_map", img);
  if (window < 3 || window % 2 == 0) {
    throw ValueError("enl_map: window must be odd and >= 3");
  }
  const std::size_t h = img.dim(1), w = img.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const double count = static_cast<double>(window * window);
  constexpr double kVarFloor = 1e-12;
  constexpr double kCap = 1e6;
  std::vector<double> v(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0, s2 = 0.0;
      for (std::ptrdiff_t dy = -half; dy <= half; ++dy) {
        // replicate padding clamps indices to the border
        std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
        yy = std::clamp<std::ptrdiff_t>(yy, 0, static_cast<std::ptrdiff_t>(h) - 1);
        for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
          std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
          xx = std::clamp<std::ptrdiff_t>(xx, 0, static_cast<std::ptrdiff_t>(w) - 1);
          const double p = img[static_cast<std::size_t>(yy) * w +
                               static_cast<std::size_t>(xx)];
          s += p;
          s2 += p * p;
        }
      }
      const double mu = s / count;
      const double var = s2 / count - mu * mu;
      v[y * w + x] = var < kVarFloor ? kCap : mu * mu / var;
    }
  }
  return Tensor({1, h, w}, std::move(v));
}

// ---------------------------------------------------------------------------
// manifests
// ---------------------------------------------------------------------------

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing file: " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  const auto resolve = [&](const std::string& rel) -> std::string {
    if (rel.empty()) return rel;
    const std::filesystem::path p(rel);
    return p.is_absolute() ? p.string() : (base / p).string();
  };

  std::vector<ManifestRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (first && !fields.empty() && fields[0] == "id") {
      first = false;
      continue;  // header
    }
    first = false;
    if (fields.size() < 3 || fields.size() > 4) {
      throw IoError("manifest line needs id,rgb,sar[,mask]: " + line);
    }
    ManifestRow row;
    row.id = fields[0];
    row.rgb_path = resolve(fields[1]);
    row.sar_path = resolve(fields[2]);
    row.mask_path = fields.size() == 4 ? resolve(fields[3]) : std::string();
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("manifest has no pairs: " + path);
  return rows;
}

PairRecord load_pair(const ManifestRow& row) {
  PairRecord pr;
  pr.id = row.id;
  pr.rgb = io::read_image(row.rgb_path).pixels;
  Tensor sar = io::read_image(row.sar_path).pixels;
  if (sar.dim(0) != 1) {
    throw ShapeError("pair '" + row.id + "': sar image must be grayscale");
  }
  pr.sar = sar;
  if (!row.mask_path.empty()) {
    Tensor m = io::read_image(row.mask_path).pixels;
    if (m.dim(0) != 1) {
      throw ShapeError("pair '" + row.id + "': mask image must be grayscale");
    }
    std::vector<double> v(m.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = m[i] > 0.5 ? 1.0 : 0.0;
    pr.mask = Tensor(m.shape(), std::move(v));
  }
  return pr;
}

}  // namespace pad::diag

#include "pad/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <vector>

namespace pad::spectral {

namespace {

using cd = std::complex<double>;

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kAmpGuard = 1e-12;  // below this, polar gradients are zero

bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

// Untracked fast path keeps the same finiteness guarantee as Graph::record.
Tensor checked(const char* op, Shape shape, std::vector<double> data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by '") + op + "'");
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

// Iterative radix-2 with a directly evaluated twiddle table (no recurrence
// drift). sign = -1 forward, +1 inverse; both unnormalized.
void fft_pow2(std::vector<cd>& a, int sign) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j |= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  std::vector<cd> tw(n / 2);
  const double base = static_cast<double>(sign) * 2.0 * kPi / static_cast<double>(n);
  for (std::size_t k = 0; k < n / 2; ++k) {
    tw[k] = std::polar(1.0, base * static_cast<double>(k));
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        cd u = a[i + k];
        cd v = a[i + k + len / 2] * tw[k * step];
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

// Bluestein chirp-z for arbitrary lengths. Chirp angles are reduced modulo
// 2n before the trig call, so they stay in [0, 2*pi) regardless of n.
void fft_bluestein(std::vector<cd>& a, int sign) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  std::vector<cd> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    w[k] = std::polar(1.0, static_cast<double>(sign) * kPi * static_cast<double>(k2) /
                               static_cast<double>(n));
  }
  std::vector<cd> u(m, cd{});
  std::vector<cd> v(m, cd{});
  for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * w[k];
  for (std::size_t k = 0; k < n; ++k) {
    v[k] = std::conj(w[k]);
    if (k) v[m - k] = std::conj(w[k]);
  }
  fft_pow2(u, -1);
  fft_pow2(v, -1);
  for (std::size_t i = 0; i < m; ++i) u[i] *= v[i];
  fft_pow2(u, +1);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * inv_m * w[k];
}

void fft_any(std::vector<cd>& a, int sign) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size())) {
    fft_pow2(a, sign);
  } else {
    fft_bluestein(a, sign);
  }
}

// Full complex 2D transform, rows then columns, unnormalized.
void dft2_inplace(std::vector<cd>& grid, std::size_t h, std::size_t w, int sign) {
  std::vector<cd> buf(std::max(h, w));
  for (std::size_t y = 0; y < h; ++y) {
    buf.assign(grid.begin() + static_cast<std::ptrdiff_t>(y * w),
               grid.begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
    buf.resize(w);
    fft_any(buf, sign);
    std::copy(buf.begin(), buf.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  for (std::size_t x = 0; x < w; ++x) {
    buf.resize(h);
    for (std::size_t y = 0; y < h; ++y) buf[y] = grid[y * w + x];
    fft_any(buf, sign);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = buf[y];
  }
}

// Half-spectrum FFT of a real image: row transforms, keep the leading
// half_width columns, then column transforms.
std::vector<cd> rfft2_kernel(const double* x, std::size_t h, std::size_t w) {
  const std::size_t wh = w / 2 + 1;
  std::vector<cd> half(h * wh);
  std::vector<cd> row(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < w; ++i) row[i] = cd(x[y * w + i], 0.0);
    fft_any(row, -1);
    for (std::size_t u = 0; u < wh; ++u) half[y * wh + u] = row[u];
  }
  std::vector<cd> col(h);
  for (std::size_t u = 0; u < wh; ++u) {
    for (std::size_t y = 0; y < h; ++y) col[y] = half[y * wh + u];
    fft_any(col, -1);
    for (std::size_t y = 0; y < h; ++y) half[y * wh + u] = col[y];
  }
  return half;
}

// Expand a packed half grid to the full spectrum using conjugate symmetry
// for the dropped columns, inverse-transform, normalize by 1/(h*w).
// Returns the real part; *residual gets ||imag|| / max(||real||, tiny).
std::vector<double> irfft2_kernel(const double* re, const double* im, std::size_t h,
                                  std::size_t w, double* residual) {
  const std::size_t wh = w / 2 + 1;
  std::vector<cd> grid(h * w);
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < wh; ++u) {
      grid[v * w + u] = cd(re[v * wh + u], im[v * wh + u]);
    }
    for (std::size_t u = wh; u < w; ++u) {
      const std::size_t mv = (h - v) % h;
      const std::size_t mu = w - u;
      grid[v * w + u] = std::conj(cd(re[mv * wh + mu], im[mv * wh + mu]));
    }
  }
  dft2_inplace(grid, h, w, +1);
  const double norm = 1.0 / (static_cast<double>(h) * static_cast<double>(w));
  std::vector<double> out(h * w);
  double re2 = 0.0;
  double im2 = 0.0;
  for (std::size_t i = 0; i < h * w; ++i) {
    const cd z = grid[i] * norm;
    out[i] = z.real();
    re2 += z.real() * z.real();
    im2 += z.imag() * z.imag();
  }
  if (residual) {
    *residual = (im2 == 0.0) ? 0.0 : std::sqrt(im2) / std::max(std::sqrt(re2), 1e-300);
  }
  return out;
}

// Columns whose conjugate mirror falls in the dropped range contribute twice
// to the reconstruction; DC (and Nyquist for even widths) contribute once.
double column_multiplicity(std::size_t u, std::size_t w) {
  const std::size_t wh = w / 2 + 1;
  return (u >= 1 && u <= w - wh) ? 2.0 : 1.0;
}

void require_image_2d(const Tensor& x, std::size_t& h, std::size_t& w,
                      const char* who) {
  if (x.rank() == 2) {
    h = x.dim(0);
    w = x.dim(1);
  } else if (x.rank() == 3 && x.dim(0) == 1) {
    h = x.dim(1);
    w = x.dim(2);
  } else {
    throw ShapeError(std::string(who) + " expects [H, W] or [1, H, W], got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

// ---------------- plain (tape-free) surface ----------------

HalfSpectrum rfft2(const Tensor& x) {
  std::size_t h = 0;
  std::size_t w = 0;
  require_image_2d(x, h, w, "rfft2");
  if (h < 2 || w < 2) {
    throw ShapeError("rfft2: degenerate 1-pixel axis in " + shape_str(x.shape()));
  }
  const std::size_t wh = w / 2 + 1;
  const std::vector<cd> half = rfft2_kernel(x.data().data(), h, w);
  std::vector<double> re(h * wh);
  std::vector<double> im(h * wh);
  for (std::size_t i = 0; i < half.size(); ++i) {
    re[i] = half[i].real();
    im[i] = half[i].imag();
  }
  return HalfSpectrum{h, w, Tensor({h, wh}, std::move(re)), Tensor({h, wh}, std::move(im))};
}

HalfSpectrum naive_dft2(const Tensor& x) {
  std::size_t h = 0;
  std::size_t w = 0;
  require_image_2d(x, h, w, "naive_dft2");
  if (h < 2 || w < 2) {
    throw ShapeError("naive_dft2: degenerate 1-pixel axis in " + shape_str(x.shape()));
  }
  const std::size_t wh = w / 2 + 1;
  const auto& xd = x.data();
  std::vector<double> re(h * wh, 0.0);
  std::vector<double> im(h * wh, 0.0);
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < wh; ++u) {
      double sr = 0.0;
      double si = 0.0;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double ang = -2.0 * kPi *
                             (static_cast<double>(u) * static_cast<double>(xx) /
                                  static_cast<double>(w) +
                              static_cast<double>(v) * static_cast<double>(y) /
                                  static_cast<double>(h));
          sr += xd[y * w + xx] * std::cos(ang);
          si += xd[y * w + xx] * std::sin(ang);
        }
      }
      re[v * wh + u] = sr;
      im[v * wh + u] = si;
    }
  }
  return HalfSpectrum{h, w, Tensor({h, wh}, std::move(re)), Tensor({h, wh}, std::move(im))};
}

namespace {

HalfSpectrum roll_spectrum(const HalfSpectrum& s, std::size_t amount) {
  const std::size_t h = s.height;
  const std::size_t wh = s.half_width();
  const auto& re = s.re.data();
  const auto& im = s.im.data();
  std::vector<double> ore(h * wh);
  std::vector<double> oim(h * wh);
  for (std::size_t v = 0; v < h; ++v) {
    const std::size_t src = (v + h - amount % h) % h;
    std::copy(re.begin() + static_cast<std::ptrdiff_t>(src * wh),
              re.begin() + static_cast<std::ptrdiff_t>((src + 1) * wh),
              ore.begin() + static_cast<std::ptrdiff_t>(v * wh));
    std::copy(im.begin() + static_cast<std::ptrdiff_t>(src * wh),
              im.begin() + static_cast<std::ptrdiff_t>((src + 1) * wh),
              oim.begin() + static_cast<std::ptrdiff_t>(v * wh));
  }
  return HalfSpectrum{h, s.full_width, Tensor({h, wh}, std::move(ore)),
                      Tensor({h, wh}, std::move(oim))};
}

}  // namespace

HalfSpectrum shift_half(const HalfSpectrum& s) { return roll_spectrum(s, s.height / 2); }

HalfSpectrum unshift_half(const HalfSpectrum& s) {
  return roll_spectrum(s, s.height - s.height / 2);
}

Tensor amplitude(const HalfSpectrum& s) {
  const auto& re = s.re.data();
  const auto& im = s.im.data();
  std::vector<double> out(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) out[i] = std::hypot(re[i], im[i]);
  return Tensor(s.re.shape(), std::move(out));
}

Tensor phase_angle(const HalfSpectrum& s) {
  const auto& re = s.re.data();
  const auto& im = s.im.data();
  std::vector<double> out(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) {
    double p = std::atan2(im[i], re[i]);
    if (p >= kPi) p = -kPi;
    out[i] = p;
  }
  return Tensor(s.re.shape(), std::move(out));
}

// ---------------- tape ops ----------------

Tensor rfft2_packed(Graph* g, const Tensor& x) {
  std::size_t h = 0;
  std::size_t w = 0;
  require_image_2d(x, h, w, "rfft2_packed");
  const std::size_t wh = w / 2 + 1;
  const std::vector<cd> half = rfft2_kernel(x.data().data(), h, w);
  std::vector<double> out(2 * h * wh);
  for (std::size_t i = 0; i < half.size(); ++i) {
    out[i] = half[i].real();
    out[h * wh + i] = half[i].imag();
  }
  Shape out_shape{2, h, wh};
  if (!g || !x.tracked()) {
    return checked("rfft2", std::move(out_shape), std::move(out));
  }
  return g->record(
      "rfft2", std::move(out_shape), std::move(out), {&x},
      [h, w, wh](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
        if (in[0] < 0) return;
        // Adjoint of the half-spectrum DFT: zero-pad the dropped columns and
        // apply the unnormalized inverse transform; keep the real part.
        std::vector<cd> grid(h * w, cd{});
        for (std::size_t v = 0; v < h; ++v) {
          for (std::size_t u = 0; u < wh; ++u) {
            grid[v * w + u] = cd(gout[v * wh + u], gout[h * wh + v * wh + u]);
          }
        }
        dft2_inplace(grid, h, w, +1);
        std::vector<double> gx(h * w);
        for (std::size_t i = 0; i < h * w; ++i) gx[i] = grid[i].real();
        gg.accumulate(in[0], gx);
      });
}

Tensor irfft2_packed(Graph* g, const Tensor& packed, std::size_t full_width,
                     double* imag_residual) {
  if (packed.rank() != 3 || packed.dim(0) != 2) {
    throw ShapeError("irfft2_packed expects [2, H, half_width], got " +
                     shape_str(packed.shape()));
  }
  const std::size_t h = packed.dim(1);
  const std::size_t wh = packed.dim(2);
  if (full_width / 2 + 1 != wh) {
    throw ShapeError("irfft2_packed: half width " + std::to_string(wh) +
                     " inconsistent with full width " + std::to_string(full_width));
  }
  const std::size_t w = full_width;
  const double* re = packed.data().data();
  const double* im = re + h * wh;
  double residual = 0.0;
  std::vector<double> out = irfft2_kernel(re, im, h, w, &residual);
  if (imag_residual) {
    *imag_residual = residual;
  } else if (residual > 1e-6) {
    std::fprintf(stderr,
                 "irfft2: discarded imaginary part at relative norm %.3e "
                 "(non-symmetric spectrum)\n",
                 residual);
  }
  Shape out_shape{h, w};
  if (!g || !packed.tracked()) {
    return checked("irfft2", std::move(out_shape), std::move(out));
  }
  return g->record(
      "irfft2", std::move(out_shape), std::move(out), {&packed},
      [h, w, wh](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
        if (in[0] < 0) return;
        std::vector<cd> grid(h * w);
        for (std::size_t i = 0; i < h * w; ++i) grid[i] = cd(gout[i], 0.0);
        dft2_inplace(grid, h, w, -1);
        const double norm = 1.0 / (static_cast<double>(h) * static_cast<double>(w));
        std::vector<double> gp(2 * h * wh);
        for (std::size_t v = 0; v < h; ++v) {
          for (std::size_t u = 0; u < wh; ++u) {
            const double mult = column_multiplicity(u, w) * norm;
            const cd z = grid[v * w + u];
            gp[v * wh + u] = mult * z.real();
            gp[h * wh + v * wh + u] = mult * z.imag();
          }
        }
        gg.accumulate(in[0], gp);
      });
}

Tensor roll_rows(Graph* g, const Tensor& x, std::size_t amount) {
  if (x.rank() < 2) {
    throw ShapeError("roll_rows needs rank >= 2, got " + shape_str(x.shape()));
  }
  const std::size_t h = x.dim(x.rank() - 2);
  const std::size_t w = x.dim(x.rank() - 1);
  const std::size_t lead = x.numel() / (h * w);
  const std::size_t s = amount % h;
  const auto& xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t l = 0; l < lead; ++l) {
    for (std::size_t v = 0; v < h; ++v) {
      const std::size_t src = (v + h - s) % h;
      std::copy(xd.begin() + static_cast<std::ptrdiff_t>((l * h + src) * w),
                xd.begin() + static_cast<std::ptrdiff_t>((l * h + src + 1) * w),
                out.begin() + static_cast<std::ptrdiff_t>((l * h + v) * w));
    }
  }
  if (!g || !x.tracked()) return checked("roll_rows", x.shape(), std::move(out));
  return g->record("roll_rows", x.shape(), std::move(out), {&x},
                   [h, w, lead, s](Graph& gg, std::span<const int> in,
                                   const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     std::vector<double> gx(gout.size());
                     for (std::size_t l = 0; l < lead; ++l) {
                       for (std::size_t v = 0; v < h; ++v) {
                         const std::size_t src = (v + h - s) % h;
                         std::copy(gout.begin() + static_cast<std::ptrdiff_t>((l * h + v) * w),
                                   gout.begin() + static_cast<std::ptrdiff_t>((l * h + v + 1) * w),
                                   gx.begin() + static_cast<std::ptrdiff_t>((l * h + src) * w));
                       }
                     }
                     gg.accumulate(in[0], gx);
                   });
}

namespace {

void require_packed(const Tensor& packed, const char* who) {
  if (packed.rank() != 3 || packed.dim(0) != 2) {
    throw ShapeError(std::string(who) + " expects [2, H, half_width], got " +
                     shape_str(packed.shape()));
  }
}

}  // namespace

Tensor polar_amp(Graph* g, const Tensor& packed) {
  require_packed(packed, "polar_amp");
  const std::size_t n = packed.numel() / 2;
  const double* re = packed.data().data();
  const double* im = re + n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::hypot(re[i], im[i]);
  Shape out_shape{packed.dim(1), packed.dim(2)};
  if (!g || !packed.tracked()) {
    return checked("polar_amp", std::move(out_shape), std::move(out));
  }
  auto pp = packed.payload();
  auto ap = std::make_shared<std::vector<double>>(out);
  return g->record("polar_amp", std::move(out_shape), std::move(out), {&packed},
                   [pp, ap, n](Graph& gg, std::span<const int> in,
                               const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     std::vector<double> gp(2 * n, 0.0);
                     for (std::size_t i = 0; i < n; ++i) {
                       const double a = (*ap)[i];
                       if (a < kAmpGuard) continue;
                       gp[i] = gout[i] * (*pp)[i] / a;
                       gp[n + i] = gout[i] * (*pp)[n + i] / a;
                     }
                     gg.accumulate(in[0], gp);
                   });
}

Tensor polar_phase(Graph* g, const Tensor& packed) {
  require_packed(packed, "polar_phase");
  const std::size_t n = packed.numel() / 2;
  const double* re = packed.data().data();
  const double* im = re + n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p = std::atan2(im[i], re[i]);
    if (p >= kPi) p = -kPi;
    out[i] = p;
  }
  Shape out_shape{packed.dim(1), packed.dim(2)};
  if (!g || !packed.tracked()) {
    return checked("polar_phase", std::move(out_shape), std::move(out));
  }
  auto pp = packed.payload();
  return g->record("polar_phase", std::move(out_shape), std::move(out), {&packed},
                   [pp, n](Graph& gg, std::span<const int> in,
                           const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     std::vector<double> gp(2 * n, 0.0);
                     for (std::size_t i = 0; i < n; ++i) {
                       const double r = (*pp)[i];
                       const double m = (*pp)[n + i];
                       const double d = r * r + m * m;
                       if (d < kAmpGuard * kAmpGuard) continue;
                       gp[i] = -gout[i] * m / d;
                       gp[n + i] = gout[i] * r / d;
                     }
                     gg.accumulate(in[0], gp);
                   });
}

// ---------------- fd / fr ----------------

namespace {

struct ChannelView {
  std::size_t channels;
  std::size_t h;
  std::size_t w;
  bool had_channel_axis;
};

ChannelView channel_view(const Tensor& x, const char* who) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  throw ShapeError(std::string(who) + " expects [H, W] or [C, H, W], got " +
                   shape_str(x.shape()));
}

}  // namespace

AmpPhase fd(Graph* g, const Tensor& x) {
  const ChannelView v = channel_view(x, "fd");
  const std::size_t s = v.h / 2;
  Tensor amp;
  Tensor phase;
  for (std::size_t c = 0; c < v.channels; ++c) {
    Tensor xc = v.had_channel_axis ? ops::channel_slice(g, x, c, 1) : x;
    Tensor shifted = roll_rows(g, rfft2_packed(g, xc), s);
    Tensor a = polar_amp(g, shifted);
    Tensor p = polar_phase(g, shifted);
    if (!v.had_channel_axis) return AmpPhase{a, p, v.w};
    a = ops::reshape(g, a, {1, v.h, v.w / 2 + 1});
    p = ops::reshape(g, p, {1, v.h, v.w / 2 + 1});
    amp = c == 0 ? a : ops::concat_channels(g, amp, a);
    phase = c == 0 ? p : ops::concat_channels(g, phase, p);
  }
  return AmpPhase{amp, phase, v.w};
}

Tensor fr(Graph* g, const AmpPhase& ap, double* imag_residual) {
  if (ap.amp.shape() != ap.phase.shape()) {
    throw ShapeError("fr: amp " + shape_str(ap.amp.shape()) + " vs phase " +
                     shape_str(ap.phase.shape()));
  }
  // Negative amplitudes are accepted: a * e^{i p} with a < 0 is the same
  // complex bin as |a| * e^{i (p + pi)}, and downstream refinement stages
  // may legitimately push amplitudes below zero.
  const ChannelView v = channel_view(ap.amp, "fr");
  if (ap.full_width / 2 + 1 != v.w) {
    throw ShapeError("fr: half width " + std::to_string(v.w) +
                     " inconsistent with full width " + std::to_string(ap.full_width));
  }
  const std::size_t h = v.h;
  const std::size_t unshift = h - h / 2;
  double worst = 0.0;
  Tensor out;
  for (std::size_t c = 0; c < v.channels; ++c) {
    Tensor a = v.had_channel_axis ? ops::channel_slice(g, ap.amp, c, 1) : ap.amp;
    Tensor p = v.had_channel_axis ? ops::channel_slice(g, ap.phase, c, 1) : ap.phase;
    a = ops::reshape(g, a, {1, h, v.w});
    p = ops::reshape(g, p, {1, h, v.w});
    Tensor re = ops::hadamard(g, a, ops::cos(g, p));
    Tensor im = ops::hadamard(g, a, ops::sin(g, p));
    Tensor packed = roll_rows(g, ops::concat_channels(g, re, im), unshift);
    double res = 0.0;
    Tensor spatial = irfft2_packed(g, packed, ap.full_width, &res);
    worst = std::max(worst, res);
    if (!v.had_channel_axis) {
      out = spatial;
    } else {
      Tensor s3 = ops::reshape(g, spatial, {1, h, ap.full_width});
      out = c == 0 ? s3 : ops::concat_channels(g, out, s3);
    }
  }
  if (imag_residual) {
    *imag_residual = worst;
  } else if (worst > 1e-6) {
    std::fprintf(stderr, "fr: discarded imaginary part at relative norm %.3e\n", worst);
  }
  return out;
}

}  // namespace pad::spectral

#pragma once

#include <cstddef>

#include "pad/tensor.hpp"

namespace pad::spectral {

/// Non-redundant half of the 2D spectrum of a real image. `re`/`im` are
/// [H, half_width] with half_width = floor(W/2)+1; the dropped columns are
/// implied by conjugate symmetry.
struct HalfSpectrum {
  std::size_t height = 0;
  std::size_t full_width = 0;
  Tensor re;
  Tensor im;

  std::size_t half_width() const { return full_width / 2 + 1; }
};

/// Amplitude/phase view of (shifted) half spectra. For multi-channel input
/// the tensors are [C, H, half_width], otherwise [H, half_width]. Phase lies
/// in [-pi, pi); amp is nonnegative.
struct AmpPhase {
  Tensor amp;
  Tensor phase;
  std::size_t full_width = 0;
};

/// Real-input 2D FFT keeping the non-redundant half spectrum.
/// Accepts [H, W] (or [1, H, W]) with H, W >= 2.
HalfSpectrum rfft2(const Tensor& x);

/// Quadratic-time reference transform; identical contract to rfft2. Oracle
/// for correctness tests, never used on a hot path.
HalfSpectrum naive_dft2(const Tensor& x);

/// Rotate rows so the v=0 row lands on row floor(H/2) (spectrum centering
/// along the full axis; the half axis is already anchored at u=0).
HalfSpectrum shift_half(const HalfSpectrum& s);
HalfSpectrum unshift_half(const HalfSpectrum& s);

/// Amplitude / phase of a half spectrum (no tape involvement).
Tensor amplitude(const HalfSpectrum& s);
Tensor phase_angle(const HalfSpectrum& s);

// ---- differentiable building blocks (tape ops) ----

/// FFT of a real [H, W] (or [1, H, W]) image packed as [2, H, half_width]:
/// channel 0 real, channel 1 imaginary. Length-1 axes are transformed by the
/// exact trivial DFT so degenerate feature maps stay usable.
Tensor rfft2_packed(Graph* g, const Tensor& x);

/// Inverse of rfft2_packed with 1/(H*W) normalization. The imaginary part of
/// the reconstruction is discarded; its relative norm is written to
/// *imag_residual when given, otherwise a warning is emitted if it exceeds
/// 1e-6 (a symmetric spectrum reconstructs with residual ~0).
Tensor irfft2_packed(Graph* g, const Tensor& packed, std::size_t full_width,
                     double* imag_residual = nullptr);

/// Cyclic rotation of the second-to-last axis by `amount` (gradient is the
/// inverse rotation).
Tensor roll_rows(Graph* g, const Tensor& x, std::size_t amount);

/// Elementwise sqrt(re^2 + im^2) of a packed spectrum [2, ...] -> [...].
/// Gradient is defined as zero wherever amp < 1e-12.
Tensor polar_amp(Graph* g, const Tensor& packed);

/// Elementwise atan2(im, re) of a packed spectrum, range [-pi, pi).
/// Gradient is defined as zero wherever amp < 1e-12.
Tensor polar_phase(Graph* g, const Tensor& packed);

// ---- frequency decoupling / recoupling ----

/// Decouple an image into (amplitude, phase) of its shifted half spectrum.
/// x is [H, W] or [C, H, W]; channels are transformed independently.
/// Differentiable end-to-end when x is tracked on g.
AmpPhase fd(Graph* g, const Tensor& x);

/// Recouple amplitude and phase into a spatial image [H, W] / [C, H, W]:
/// re-embed amp*exp(i*phase), undo the shift, inverse transform. The largest
/// per-channel imaginary residual is reported through *imag_residual (see
/// irfft2_packed).
Tensor fr(Graph* g, const AmpPhase& ap, double* imag_residual = nullptr);

}  // namespace pad::spectral

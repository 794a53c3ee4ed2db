#include <doctest.h>

#include <cmath>
#include <complex>

#include "pad/spectral.hpp"
#include "test_util.hpp"

using namespace pad;
using spectral::AmpPhase;
using spectral::HalfSpectrum;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double spectra_max_diff(const HalfSpectrum& a, const HalfSpectrum& b) {
  return std::max(tst::max_abs_diff(a.re, b.re), tst::max_abs_diff(a.im, b.im));
}

}  // namespace

TEST_SUITE("spectral") {

TEST_CASE("fast transform matches the quadratic oracle on mixed sizes") {
  const std::pair<std::size_t, std::size_t> sizes[] = {
      {4, 4}, {8, 8}, {8, 6}, {7, 5}, {16, 16}, {5, 9}, {6, 12}};
  Rng rng(2024);
  for (auto [h, w] : sizes) {
    for (int rep = 0; rep < 3; ++rep) {
      Tensor x = tst::random_tensor(rng, {h, w}, 0.0, 1.0);
      CHECK(spectra_max_diff(spectral::rfft2(x), spectral::naive_dft2(x)) < 1e-9);
    }
  }
}

TEST_CASE("constant image concentrates at DC") {
  Tensor x = Tensor::full({6, 8}, 0.37);
  HalfSpectrum s = spectral::shift_half(spectral::rfft2(x));
  Tensor amp = spectral::amplitude(s);
  // after the shift the v=0 row sits at row floor(H/2)
  CHECK(amp.at({3, 0}) == doctest::Approx(0.37 * 48).epsilon(1e-12));
  double rest = 0.0;
  for (std::size_t i = 0; i < amp.numel(); ++i) {
    if (i != 3 * amp.shape()[1]) rest = std::max(rest, std::abs(amp[i]));
  }
  CHECK(rest < 1e-10);
  CHECK(spectral::phase_angle(s).at({3, 0}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("negated image stores the DC phase as -pi, never +pi") {
  Tensor x = Tensor::full({4, 4}, -1.0);
  AmpPhase ap = spectral::fd(nullptr, x);
  CHECK(ap.phase.at({2, 0}) == doctest::Approx(-kPi).epsilon(1e-12));
  for (double p : ap.phase.data()) {
    CHECK(p >= -kPi);
    CHECK(p < kPi);
  }
}

TEST_CASE("Parseval: half-spectrum energy with column multiplicity") {
  Rng rng(5);
  for (std::size_t w : {7UL, 8UL}) {
    Tensor x = tst::random_tensor(rng, {6, w});
    HalfSpectrum s = spectral::rfft2(x);
    const std::size_t wh = s.half_width();
    double spectral_energy = 0.0;
    for (std::size_t v = 0; v < 6; ++v) {
      for (std::size_t u = 0; u < wh; ++u) {
        const double mult = (u >= 1 && u <= w - wh) ? 2.0 : 1.0;
        const double re = s.re.at({v, u});
        const double im = s.im.at({v, u});
        spectral_energy += mult * (re * re + im * im);
      }
    }
    double signal_energy = 0.0;
    for (double v : x.data()) signal_energy += v * v;
    CHECK(spectral_energy / (6.0 * static_cast<double>(w)) ==
          doctest::Approx(signal_energy).epsilon(1e-12));
  }
}

TEST_CASE("circular shift multiplies the spectrum by a phase ramp") {
  Rng rng(17);
  const std::size_t h = 8;
  const std::size_t w = 8;
  Tensor x = tst::random_tensor(rng, {h, w});
  std::vector<double> moved(h * w);
  const std::size_t dy = 3;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t c = 0; c < w; ++c) moved[((y + dy) % h) * w + c] = x.at({y, c});
  }
  HalfSpectrum a = spectral::rfft2(x);
  HalfSpectrum b = spectral::rfft2(Tensor({h, w}, std::move(moved)));
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < a.half_width(); ++u) {
      const std::complex<double> ramp =
          std::polar(1.0, -2.0 * kPi * static_cast<double>(v * dy) / static_cast<double>(h));
      const std::complex<double> want =
          std::complex<double>(a.re.at({v, u}), a.im.at({v, u})) * ramp;
      CHECK(b.re.at({v, u}) == doctest::Approx(want.real()).epsilon(1e-9));
      CHECK(b.im.at({v, u}) == doctest::Approx(want.imag()).epsilon(1e-9));
    }
  }
}

TEST_CASE("shift then unshift is the identity for odd and even heights") {
  Rng rng(23);
  for (std::size_t h : {6UL, 7UL}) {
    Tensor x = tst::random_tensor(rng, {h, 6});
    HalfSpectrum s = spectral::rfft2(x);
    CHECK(spectra_max_diff(spectral::unshift_half(spectral::shift_half(s)), s) == 0.0);
  }
}

TEST_CASE("fr(fd(x)) reconstructs x for 1- and 4-channel input") {
  Rng rng(31);
  for (std::size_t c : {1UL, 4UL}) {
    Tensor x = c == 1 ? tst::random_tensor(rng, {16, 16})
                      : tst::random_tensor(rng, {c, 16, 16});
    double residual = 1.0;
    Tensor back = spectral::fr(nullptr, spectral::fd(nullptr, x), &residual);
    CHECK(back.shape() == x.shape());
    CHECK(tst::max_abs_diff(back, x) < 1e-9);
    CHECK(residual < 1e-6);
  }
}

TEST_CASE("fr round trip also holds for odd sizes") {
  Rng rng(37);
  Tensor x = tst::random_tensor(rng, {7, 5});
  double residual = 1.0;
  Tensor back = spectral::fr(nullptr, spectral::fd(nullptr, x), &residual);
  CHECK(tst::max_abs_diff(back, x) < 1e-9);
  CHECK(residual < 1e-6);
}

TEST_CASE("length-1 axes use the exact trivial transform") {
  // Degenerate feature maps (1x1) must round-trip bit-exactly so deep
  // encoder stages can pass through the spectral path.
  Tensor x({1, 1, 1}, {-2.5});
  AmpPhase ap = spectral::fd(nullptr, x);
  CHECK(ap.amp.item() == 2.5);
  CHECK(ap.phase.item() == doctest::Approx(-kPi));
  Tensor back = spectral::fr(nullptr, ap);
  CHECK(back.item() == doctest::Approx(-2.5).epsilon(1e-15));
}

TEST_CASE("public transforms reject 1-pixel axes") {
  CHECK_THROWS_AS(spectral::rfft2(Tensor::zeros({1, 8})), ShapeError);
  CHECK_THROWS_AS(spectral::rfft2(Tensor::zeros({8, 1})), ShapeError);
  CHECK_THROWS_AS(spectral::naive_dft2(Tensor::zeros({1, 8})), ShapeError);
}

TEST_CASE("non-symmetric hand-built spectrum reports a residual but returns") {
  // Random amp/phase will not satisfy conjugate symmetry in the stored
  // columns; fr must still produce output and flag the imaginary energy.
  Rng rng(41);
  Tensor amp = tst::random_tensor(rng, {8, 5}, 0.5, 2.0);
  Tensor phase = tst::random_tensor(rng, {8, 5}, -3.0, 3.0);
  double residual = 0.0;
  Tensor out = spectral::fr(nullptr, AmpPhase{amp, phase, 8}, &residual);
  CHECK(out.shape() == Shape{8, 8});
  CHECK(residual > 1e-6);
}

TEST_CASE("fr validates width consistency") {
  Tensor phase = Tensor::zeros({2, 2});
  Tensor ok = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(spectral::fr(nullptr, AmpPhase{ok, phase, 5}), ShapeError);
}

TEST_CASE("fr treats a negative amplitude as a pi phase flip") {
  Rng rng(91);
  Tensor x = tst::random_tensor(rng, {4, 4}, 0.5, 1.5);
  AmpPhase ap = spectral::fd(nullptr, x);
  // negate one amplitude bin and advance its phase by pi: same complex bin
  std::vector<double> amp2(ap.amp.data());
  std::vector<double> ph2(ap.phase.data());
  amp2[5] = -amp2[5];
  ph2[5] += 3.14159265358979323846;
  double r1 = 0.0, r2 = 0.0;
  Tensor a = spectral::fr(nullptr, ap, &r1);
  Tensor b = spectral::fr(
      nullptr,
      AmpPhase{Tensor(ap.amp.shape(), std::move(amp2)),
               Tensor(ap.phase.shape(), std::move(ph2)), ap.full_width},
      &r2);
  CHECK(tst::max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("gradcheck: fd/fr composition with a downstream scalar") {
  Rng rng(53);
  for (int seed = 0; seed < 3; ++seed) {
    // DC offset keeps every spectral bin's amplitude away from the guard.
    Tensor x = tst::random_tensor(rng, {6, 6}, 1.0, 2.0);
    double err = gradcheck(
        [](Graph& g, const std::vector<Tensor>& in) {
          AmpPhase ap = spectral::fd(&g, in[0]);
          double res = 0.0;
          Tensor back = spectral::fr(&g, ap, &res);
          return ops::sum(&g, ops::sigmoid(&g, back));
        },
        {x});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("gradcheck: scalar functions of amp and phase separately") {
  Rng rng(59);
  Tensor x = tst::random_tensor(rng, {4, 4}, 1.0, 2.0);
  double err_amp = gradcheck(
      [](Graph& g, const std::vector<Tensor>& in) {
        return ops::sum_sq(&g, spectral::fd(&g, in[0]).amp);
      },
      {x});
  CHECK(err_amp < 1e-6);
  double err_phase = gradcheck(
      [](Graph& g, const std::vector<Tensor>& in) {
        AmpPhase ap = spectral::fd(&g, in[0]);
        return ops::sum(&g, ops::sin(&g, ap.phase));
      },
      {x});
  CHECK(err_phase < 1e-6);
}

TEST_CASE("gradcheck: irfft2 against amp/phase inputs via fr") {
  Rng rng(61);
  Tensor base = tst::random_tensor(rng, {2, 6, 6}, 1.0, 2.0);
  AmpPhase ap = spectral::fd(nullptr, base);
  double err = gradcheck(
      [&](Graph& g, const std::vector<Tensor>& in) {
        AmpPhase mod{in[0], in[1], 6};
        double res = 0.0;
        return ops::sum(&g, ops::sigmoid(&g, spectral::fr(&g, mod, &res)));
      },
      {ap.amp.detached(), ap.phase.detached()});
  CHECK(err < 1e-6);
}

}  // TEST_SUITE

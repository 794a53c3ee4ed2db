#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "pad/error.hpp"
#include "pad/fusion.hpp"
#include "pad/rng.hpp"
#include "pad/spectral.hpp"
#include "pad/tensor.hpp"
#include "test_util.hpp"

using namespace pad;
using namespace pad::fusion;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double leaky_ref(double x) { return x > 0.0 ? x : 0.01 * x; }

void zero_all(PadBlockParams& p) {
  for_each_param(p, "blk", [](const std::string&, Tensor& t) {
    t = Tensor::zeros(t.shape());
  });
}

// fuse_w selecting the first half channels: out_c = in_c (identity on x1).
Tensor identity_first_half(std::size_t c) {
  std::vector<double> w(c * 2 * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) w[i * 2 * c + i] = 1.0;
  return Tensor({c, 2 * c}, std::move(w));
}

// fuse_w selecting the second half channels.
Tensor identity_second_half(std::size_t c) {
  std::vector<double> w(c * 2 * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) w[i * 2 * c + c + i] = 1.0;
  return Tensor({c, 2 * c}, std::move(w));
}

// fuse_w = [I | I]: out = x1 + x2 per channel.
Tensor identity_both_halves(std::size_t c) {
  std::vector<double> w(c * 2 * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    w[i * 2 * c + i] = 1.0;
    w[i * 2 * c + c + i] = 1.0;
  }
  return Tensor({c, 2 * c}, std::move(w));
}

}  // namespace

TEST_SUITE("fusion") {

// ---------------------------------------------------------------------------
// radial distance
// ---------------------------------------------------------------------------

TEST_CASE("radial distance is zero at center and one at the far corner") {
  Tensor d = radial_dist(8, 5);
  CHECK(d.shape() == Shape{1, 8, 5});
  CHECK(d.at({0, 4, 0}) == 0.0);
  // farthest corner: top row (offset 4), last column (offset 4)
  CHECK(d.at({0, 0, 4}) == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : d.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("radial distance matches per-bin enumeration on an 8x5 grid") {
  Tensor d = radial_dist(8, 5);
  const double denom = std::sqrt(4.0 * 4.0 + 4.0 * 4.0);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 5; ++x) {
      const double dy = static_cast<double>(y) - 4.0;
      const double dx = static_cast<double>(x);
      const double expect = std::sqrt(dx * dx + dy * dy) / denom;
      CHECK(d.at({0, y, x}) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("degenerate 1x1 grid yields zero distance") {
  Tensor d = radial_dist(1, 1);
  CHECK(d.numel() == 1);
  CHECK(d.data()[0] == 0.0);
}

// ---------------------------------------------------------------------------
// spatial gating
// ---------------------------------------------------------------------------

TEST_CASE("saturated gate with first-half pick returns x1 exactly") {
  Rng rng(1);
  Tensor x1 = tst::random_tensor(rng, {3, 4, 4});
  Tensor x2 = tst::random_tensor(rng, {3, 4, 4});
  ScfParams p = make_scf(3, rng);
  p.att_w = Tensor::zeros({1, 6});
  p.att_b = Tensor({1}, {100.0});  // sigmoid(100) == 1.0 in double
  p.fuse_w = identity_first_half(3);
  p.fuse_b = Tensor::zeros({3});
  Tensor out = scf_forward(nullptr, x1, x2, p);
  CHECK(tst::max_abs_diff(out, x1) == 0.0);
}

TEST_CASE("neutral gate with summing fuse returns the mean of the inputs") {
  Rng rng(2);
  Tensor x1 = tst::random_tensor(rng, {2, 3, 5});
  Tensor x2 = tst::random_tensor(rng, {2, 3, 5});
  ScfParams p;
  p.att_w = Tensor::zeros({1, 4});
  p.att_b = Tensor::zeros({1});  // S = 0.5 everywhere
  p.fuse_w = identity_both_halves(2);
  p.fuse_b = Tensor::zeros({2});
  Tensor out = scf_forward(nullptr, x1, x2, p);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double expect = 0.5 * (x1.data()[i] + x2.data()[i]);
    CHECK(out.data()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("gating matches a hand-rolled scalar oracle") {
  Rng rng(3);
  const std::size_t c = 2, h = 3, w = 3;
  Tensor x1 = tst::random_tensor(rng, {c, h, w});
  Tensor x2 = tst::random_tensor(rng, {c, h, w});
  ScfParams p = make_scf(c, rng);
  Tensor out = scf_forward(nullptr, x1, x2, p);

  for (std::size_t pix = 0; pix < h * w; ++pix) {
    // gate from the concatenated channel vector at this pixel
    double att = p.att_b.data()[0];
    for (std::size_t k = 0; k < c; ++k) {
      att += p.att_w.data()[k] * x1.data()[k * h * w + pix];
      att += p.att_w.data()[c + k] * x2.data()[k * h * w + pix];
    }
    const double s = sigmoid_ref(att);
    for (std::size_t co = 0; co < c; ++co) {
      double acc = p.fuse_b.data()[co];
      for (std::size_t k = 0; k < c; ++k) {
        acc += p.fuse_w.data()[co * 2 * c + k] * (s * x1.data()[k * h * w + pix]);
        acc += p.fuse_w.data()[co * 2 * c + c + k] *
               ((1.0 - s) * x2.data()[k * h * w + pix]);
      }
      CHECK(out.data()[co * h * w + pix] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("gating rejects mismatched inputs") {
  Rng rng(4);
  ScfParams p = make_scf(2, rng);
  CHECK_THROWS_AS(scf_forward(nullptr, Tensor::zeros({2, 3, 3}),
                              Tensor::zeros({2, 3, 4}), p),
                  ShapeError);
}

// ---------------------------------------------------------------------------
// phase correction
// ---------------------------------------------------------------------------

TEST_CASE("zero-weight phase stack scales phase by exactly 1.5") {
  Rng rng(5);
  Tensor phase = tst::random_tensor(rng, {4, 6, 4}, -3.0, 3.0);
  PscParams p = make_psc(4, 2, 4, rng);
  for (auto& w : p.stack_w) w = Tensor::zeros(w.shape());
  p.final_w = Tensor::zeros(p.final_w.shape());
  Tensor out = psc_forward(nullptr, phase, p);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(1.5 * phase.data()[i]).epsilon(1e-15));
  }
}

TEST_CASE("zero phase input stays zero under any weights") {
  Rng rng(6);
  PscParams p = make_psc(8, 2, 4, rng);
  Tensor out = psc_forward(nullptr, Tensor::zeros({8, 5, 3}), p);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("phase scaling factor lies strictly inside (1, 2)") {
  Rng rng(7);
  PscParams p = make_psc(4, 2, 4, rng);
  // ones input: output value equals the per-pixel factor 1 + PCM
  Tensor out = psc_forward(nullptr, Tensor::full({4, 6, 4}, 1.0), p);
  for (double v : out.data()) {
    CHECK(v > 1.0);
    CHECK(v < 2.0);
  }
}

TEST_CASE("phase stack matches a hand-rolled scalar oracle (d=2, r=4, C=8)") {
  Rng rng(8);
  const std::size_t c = 8, h = 4, wh = 3, cr = 2;
  Tensor phase = tst::random_tensor(rng, {c, h, wh}, -3.0, 3.0);
  PscParams p = make_psc(c, 2, 4, rng);
  Tensor out = psc_forward(nullptr, phase, p);

  for (std::size_t pix = 0; pix < h * wh; ++pix) {
    double h1[cr], h2[cr];
    for (std::size_t co = 0; co < cr; ++co) {
      double acc = p.stack_b[0].data()[co];
      for (std::size_t ci = 0; ci < c; ++ci) {
        acc += p.stack_w[0].data()[co * c + ci] * phase.data()[ci * h * wh + pix];
      }
      h1[co] = leaky_ref(acc);
    }
    for (std::size_t co = 0; co < cr; ++co) {
      double acc = p.stack_b[1].data()[co];
      for (std::size_t ci = 0; ci < cr; ++ci) {
        acc += p.stack_w[1].data()[co * cr + ci] * h1[ci];
      }
      h2[co] = leaky_ref(acc);
    }
    double f = p.final_b.data()[0];
    for (std::size_t ci = 0; ci < cr; ++ci) f += p.final_w.data()[ci] * h2[ci];
    const double factor = 1.0 + sigmoid_ref(f);
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double expect = phase.data()[ci * h * wh + pix] * factor;
      CHECK(out.data()[ci * h * wh + pix] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("phase stack rejects bad configurations") {
  Rng rng(9);
  CHECK_THROWS_AS(make_psc(6, 2, 4, rng), ValueError);  // 4 does not divide 6
  CHECK_THROWS_AS(make_psc(8, 0, 4, rng), ValueError);
  PscParams p = make_psc(8, 2, 4, rng);
  CHECK_THROWS_AS(psc_forward(nullptr, Tensor::zeros({4, 3, 3}), p), ShapeError);
}

// ---------------------------------------------------------------------------
// amplitude fusion
// ---------------------------------------------------------------------------

TEST_CASE("zero branch and zero fuse reduce to the identity") {
  Rng rng(10);
  Tensor a = tst::random_tensor(rng, {3, 6, 4}, 0.0, 2.0);
  AsfParams p = make_asf(3, 0.1, 10.0, rng);
  p.mlp_w1 = Tensor::zeros(p.mlp_w1.shape());
  p.mlp_w2 = Tensor::zeros(p.mlp_w2.shape());
  p.fuse_w = Tensor::zeros(p.fuse_w.shape());
  Tensor out = asf_forward(nullptr, a, p);
  CHECK(tst::max_abs_diff(out, a) == 0.0);
}

TEST_CASE("zero branch with first-half pick doubles the amplitude") {
  Rng rng(11);
  Tensor a = tst::random_tensor(rng, {2, 4, 3}, 0.0, 2.0);
  AsfParams p = make_asf(2, 0.1, 10.0, rng);
  p.mlp_w1 = Tensor::zeros(p.mlp_w1.shape());
  p.mlp_w2 = Tensor::zeros(p.mlp_w2.shape());
  p.fuse_w = identity_first_half(2);
  Tensor out = asf_forward(nullptr, a, p);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(2.0 * a.data()[i]).epsilon(1e-15));
  }
}

TEST_CASE("soft mask is exactly one half where distance equals the radius") {
  // grid [1, 1, 3] has distances {0, 0.5, 1}; radius_raw = 0 -> R = 0.5.
  // extraction: mlp = identity pass-through for non-negative input,
  // fuse picks the refined half, so out = A + A * Mask; with A = 1,
  // Mask = out - 1.
  Rng rng(12);
  AsfParams p = make_asf(1, 0.0, 10.0, rng);
  p.mlp_w1 = Tensor({1, 1}, {1.0});
  p.mlp_w2 = Tensor({1, 1}, {1.0});
  p.fuse_w = identity_second_half(1);
  Tensor a = Tensor::full({1, 1, 3}, 1.0);
  Tensor out = asf_forward(nullptr, a, p);
  CHECK(out.at({0, 0, 1}) - 1.0 == 0.5);  // exact: sigmoid(0) == 0.5
  // monotone in distance
  CHECK(out.at({0, 0, 0}) < out.at({0, 0, 1}));
  CHECK(out.at({0, 0, 1}) < out.at({0, 0, 2}));
}

TEST_CASE("mask is monotone in distance and decreasing in radius") {
  Rng rng(13);
  const std::size_t h = 7, wh = 5;
  auto mask_of = [&](double radius_raw) {
    AsfParams p = make_asf(1, radius_raw, 10.0, rng);
    p.mlp_w1 = Tensor({1, 1}, {1.0});
    p.mlp_w2 = Tensor({1, 1}, {1.0});
    p.fuse_w = identity_second_half(1);
    p.fuse_b = Tensor::zeros({1});
    Tensor out = asf_forward(nullptr, Tensor::full({1, h, wh}, 1.0), p);
    std::vector<double> m(out.numel());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = out.data()[i] - 1.0;
    return m;
  };
  Tensor dist = radial_dist(h, wh);
  auto m0 = mask_of(0.1);
  auto m1 = mask_of(0.9);  // larger raw radius -> larger R -> smaller mask
  std::vector<std::size_t> order(m0.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist.data()[a] < dist.data()[b];
  });
  for (std::size_t k = 1; k < order.size(); ++k) {
    CHECK(m0[order[k]] >= m0[order[k - 1]]);  // monotone non-decreasing in Dist
  }
  for (std::size_t i = 0; i < m0.size(); ++i) CHECK(m1[i] < m0[i]);
}

TEST_CASE("gradient with respect to the raw radius matches finite differences") {
  Rng rng(14);
  Tensor a = tst::random_tensor(rng, {2, 4, 3}, 0.5, 1.5);
  AsfParams base = make_asf(2, 0.3, 10.0, rng);
  auto f = [&](Graph& g, const std::vector<Tensor>& in) {
    AsfParams p = base;
    p.radius_raw = in[0];
    return ops::mean(&g, asf_forward(&g, a, p));
  };
  const double err = gradcheck(f, {base.radius_raw});
  CHECK(err < 1e-6);
}

// ---------------------------------------------------------------------------
// full block
// ---------------------------------------------------------------------------

TEST_CASE("all-zero parameters leave the amplitude untouched") {
  Rng rng(15);
  Tensor x1 = tst::random_tensor(rng, {2, 4, 4});
  Tensor x2 = tst::random_tensor(rng, {2, 4, 4});
  PadBlockParams p = make_pad_block(2, 0, rng, 2, 2);
  zero_all(p);
  double residual = 0.0;
  PadBlockOut out = pad_block_forward(nullptr, x1, x2, p, &residual);
  CHECK(out.fused.shape() == Shape{2, 4, 4});
  CHECK(out.amp_before.shape() == Shape{2, 4, 3});
  // zero fuse conv -> refined amplitude identical bit for bit
  for (std::size_t i = 0; i < out.amp_before.numel(); ++i) {
    CHECK(out.amp_after.data()[i] == out.amp_before.data()[i]);
  }
  for (double v : out.fused.data()) CHECK(std::isfinite(v));
}

TEST_CASE("null inputs produce null outputs") {
  Rng rng(16);
  PadBlockParams p = make_pad_block(2, 1, rng, 2, 2);
  PadBlockOut out = pad_block_forward(nullptr, Tensor::zeros({2, 4, 4}),
                                      Tensor::zeros({2, 4, 4}), p);
  for (double v : out.fused.data()) CHECK(v == 0.0);
  for (double v : out.amp_before.data()) CHECK(v == 0.0);
  for (double v : out.amp_after.data()) CHECK(v == 0.0);
}

TEST_CASE("block equals the manual composition of its sub-operations") {
  Rng rng(17);
  Tensor x1 = tst::random_tensor(rng, {4, 8, 8});
  Tensor x2 = tst::random_tensor(rng, {4, 8, 8});
  PadBlockParams p = make_pad_block(4, 2, rng);
  PadBlockOut out = pad_block_forward(nullptr, x1, x2, p);

  Tensor x = scf_forward(nullptr, x1, x2, p.scf);
  spectral::AmpPhase ap = spectral::fd(nullptr, x);
  Tensor a2 = asf_forward(nullptr, ap.amp, p.asf);
  Tensor p2 = psc_forward(nullptr, ap.phase, p.psc);
  double sink = 0.0;
  Tensor fused = spectral::fr(
      nullptr, spectral::AmpPhase{a2, p2, ap.full_width}, &sink);

  CHECK(tst::max_abs_diff(out.fused, fused) == 0.0);
  CHECK(tst::max_abs_diff(out.amp_before, ap.amp) == 0.0);
  CHECK(tst::max_abs_diff(out.amp_after, a2) == 0.0);
}

TEST_CASE("amplitude and phase refinement commute") {
  // the two refinements act on disjoint spectral components, so evaluating
  // them in either order must produce identical recompositions
  Rng rng(18);
  Tensor x1 = tst::random_tensor(rng, {2, 6, 6});
  Tensor x2 = tst::random_tensor(rng, {2, 6, 6});
  PadBlockParams p = make_pad_block(2, 0, rng, 2, 2);
  Tensor x = scf_forward(nullptr, x1, x2, p.scf);
  spectral::AmpPhase ap = spectral::fd(nullptr, x);

  double sink = 0.0;
  Tensor a_first = asf_forward(nullptr, ap.amp, p.asf);
  Tensor p_second = psc_forward(nullptr, ap.phase, p.psc);
  Tensor fused_ap = spectral::fr(nullptr, {a_first, p_second, ap.full_width}, &sink);

  Tensor p_first = psc_forward(nullptr, ap.phase, p.psc);
  Tensor a_second = asf_forward(nullptr, ap.amp, p.asf);
  Tensor fused_pa = spectral::fr(nullptr, {a_second, p_first, ap.full_width}, &sink);

  CHECK(tst::max_abs_diff(fused_ap, fused_pa) == 0.0);
}

TEST_CASE("full block passes gradcheck for every input and parameter") {
  Rng rng(19);
  // offset inputs keep every spectral bin's amplitude well above the
  // polar-gradient guard (verified below before the expensive check)
  Tensor x1 = tst::random_tensor(rng, {2, 4, 4}, 1.0, 2.0);
  Tensor x2 = tst::random_tensor(rng, {2, 4, 4}, 1.0, 2.0);
  PadBlockParams base = make_pad_block(2, 0, rng, 2, 2);

  {
    Tensor x = scf_forward(nullptr, x1, x2, base.scf);
    spectral::AmpPhase ap = spectral::fd(nullptr, x);
    double amp_min = 1e300;
    for (double v : ap.amp.data()) amp_min = std::min(amp_min, v);
    REQUIRE(amp_min > 1e-4);
  }

  std::vector<Tensor> inputs = {x1, x2};
  for_each_param(base, "blk", [&](const std::string&, Tensor& t) {
    inputs.push_back(t);
  });

  auto f = [&](Graph& g, const std::vector<Tensor>& in) {
    PadBlockParams p = base;
    std::size_t k = 2;
    for_each_param(p, "blk", [&](const std::string&, Tensor& t) {
      t = in[k++];
    });
    PadBlockOut out = pad_block_forward(&g, in[0], in[1], p);
    Tensor loss = ops::add(&g, ops::mean(&g, out.fused),
                           ops::scale(&g, ops::sum_sq(&g, out.amp_after), 0.01));
    return loss;
  };
  const double err = gradcheck(f, inputs);
  CHECK(err < 1e-6);
}

}  // TEST_SUITE

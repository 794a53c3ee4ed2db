#include "pad/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>

#include "pad/error.hpp"

namespace pad::net {

namespace {

constexpr std::array<double, 4> kAlpha{0.5, 2.0 / 3.0, 5.0 / 6.0, 1.0};
constexpr double kIgnoreLabel = 255.0;
constexpr double kPi = 3.141592653589793238462643383279502884;

// Untracked fast path keeps the same finiteness guarantee as Graph::record.
Tensor checked(const char* op, Shape shape, std::vector<double> data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by '") + op + "'");
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

Conv3x3 make_conv(std::size_t ci, std::size_t co, Rng& rng) {
  Conv3x3 c;
  c.w = glorot({co, ci, 3, 3}, ci * 9, co * 9, rng);
  c.b = Tensor::zeros({co});
  return c;
}

void visit_conv(Conv3x3& c, const std::string& stem, const fusion::ParamVisitor& fn) {
  fn(stem + "_w", c.w);
  fn(stem + "_b", c.b);
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Class colors sit on a luminance ramp with a hue-like chroma offset chosen
// from the null plane of the grayscale weights (0.299, 0.587, 0.114): the
// grayscale projection of class k is exactly its luminance. Luminance and
// SAR intensity both increase with the class id, so every class contrast has
// the same sign in both modalities and the pairs stay phase-consistent.
std::array<double, 3> class_color(double luminance, double theta, double chroma) {
  constexpr double u1[3] = {0.891063, -0.453879, 0.0};
  constexpr double u2[3] = {0.077394, 0.151941, -0.985353};
  std::array<double, 3> rgb;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    rgb[ch] = luminance + chroma * (std::cos(theta) * u1[ch] +
                                    std::sin(theta) * u2[ch]);
  }
  return rgb;
}

/// Per-sample slices of a batch, shape-checked once. Slicing happens off the
/// tape: inputs carry no gradient, so tracking them would only grow the tape.
struct SampleView {
  Tensor rgb;     // [3, H, W]
  Tensor sar;     // [1, H, W]
  Tensor labels;  // [H, W]
};

std::vector<SampleView> split_batch(const Batch& b) {
  if (b.rgb.rank() != 4 || b.rgb.dim(1) != 3) {
    throw ShapeError("batch rgb must be [B, 3, H, W], got " + shape_str(b.rgb.shape()));
  }
  if (b.sar.rank() != 4 || b.sar.dim(1) != 1) {
    throw ShapeError("batch sar must be [B, 1, H, W], got " + shape_str(b.sar.shape()));
  }
  if (b.labels.rank() != 3) {
    throw ShapeError("batch labels must be [B, H, W], got " +
                     shape_str(b.labels.shape()));
  }
  const std::size_t n = b.rgb.dim(0);
  const std::size_t h = b.rgb.dim(2);
  const std::size_t w = b.rgb.dim(3);
  if (n == 0) throw ValueError("batch is empty");
  if (b.sar.dim(0) != n || b.labels.dim(0) != n) {
    throw ShapeError("batch tensors disagree on the sample count");
  }
  if (b.sar.dim(2) != h || b.sar.dim(3) != w || b.labels.dim(1) != h ||
      b.labels.dim(2) != w) {
    throw ShapeError("batch tensors disagree on the spatial size");
  }
  std::vector<SampleView> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].rgb = ops::reshape(nullptr, ops::channel_slice(nullptr, b.rgb, i, 1),
                              {3, h, w});
    out[i].sar = ops::reshape(nullptr, ops::channel_slice(nullptr, b.sar, i, 1),
                              {1, h, w});
    out[i].labels = ops::reshape(nullptr, ops::channel_slice(nullptr, b.labels, i, 1),
                                 {h, w});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// tape operations
// ---------------------------------------------------------------------------

Tensor conv3x3s2(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3) {
    throw ShapeError("conv3x3s2 expects x [C, H, W], got " + shape_str(x.shape()));
  }
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    throw ShapeError("conv3x3s2 expects w [Co, Ci, 3, 3], got " + shape_str(w.shape()));
  }
  if (w.dim(1) != x.dim(0)) {
    throw ShapeError("conv3x3s2 channel mismatch: x " + shape_str(x.shape()) +
                     " vs w " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ShapeError("conv3x3s2 expects b [Co], got " + shape_str(b.shape()));
  }
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0);
  const std::size_t ho = (h + 1) / 2, wo = (wd + 1) / 2;
  const auto& xd = x.data();
  const auto& wv = w.data();
  const auto& bv = b.data();

  std::vector<double> out(co * ho * wo);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t yo = 0; yo < ho; ++yo) {
      for (std::size_t xo = 0; xo < wo; ++xo) {
        double acc = bv[o];
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(2 * yo + ky) - 1;
            if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(2 * xo + kx) - 1;
              if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(wd)) continue;
              acc += wv[((o * ci + c) * 3 + ky) * 3 + kx] *
                     xd[(c * h + static_cast<std::size_t>(yi)) * wd +
                        static_cast<std::size_t>(xi)];
            }
          }
        }
        out[(o * ho + yo) * wo + xo] = acc;
      }
    }
  }
  Shape out_shape{co, ho, wo};
  if (!g) return checked("conv3x3s2", std::move(out_shape), std::move(out));

  auto xs = x.payload();
  auto ws = w.payload();
  return g->record(
      "conv3x3s2", std::move(out_shape), std::move(out), {&x, &w, &b},
      [xs, ws, ci, h, wd, co, ho, wo](Graph& gg, std::span<const int> in,
                                      const std::vector<double>& gd) {
        std::vector<double> gx, gw, gb;
        if (in[0] >= 0) gx.assign(ci * h * wd, 0.0);
        if (in[1] >= 0) gw.assign(co * ci * 9, 0.0);
        if (in[2] >= 0) gb.assign(co, 0.0);
        for (std::size_t o = 0; o < co; ++o) {
          for (std::size_t yo = 0; yo < ho; ++yo) {
            for (std::size_t xo = 0; xo < wo; ++xo) {
              const double up = gd[(o * ho + yo) * wo + xo];
              if (up == 0.0) continue;
              if (in[2] >= 0) gb[o] += up;
              if (in[0] < 0 && in[1] < 0) continue;
              for (std::size_t c = 0; c < ci; ++c) {
                for (std::size_t ky = 0; ky < 3; ++ky) {
                  const std::ptrdiff_t yi =
                      static_cast<std::ptrdiff_t>(2 * yo + ky) - 1;
                  if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::ptrdiff_t xi =
                        static_cast<std::ptrdiff_t>(2 * xo + kx) - 1;
                    if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(wd)) continue;
                    const std::size_t wi = ((o * ci + c) * 3 + ky) * 3 + kx;
                    const std::size_t pi =
                        (c * h + static_cast<std::size_t>(yi)) * wd +
                        static_cast<std::size_t>(xi);
                    if (in[0] >= 0) gx[pi] += (*ws)[wi] * up;
                    if (in[1] >= 0) gw[wi] += (*xs)[pi] * up;
                  }
                }
              }
            }
          }
        }
        if (in[0] >= 0) gg.accumulate(in[0], gx);
        if (in[1] >= 0) gg.accumulate(in[1], gw);
        if (in[2] >= 0) gg.accumulate(in[2], gb);
      });
}

Tensor upsample_nearest(Graph* g, const Tensor& x, std::size_t factor) {
  if (x.rank() != 3) {
    throw ShapeError("upsample_nearest expects [C, H, W], got " +
                     shape_str(x.shape()));
  }
  if (factor == 0) throw ValueError("upsample factor must be >= 1");
  if (factor == 1) return x;
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ho = h * factor, wo = w * factor;
  const auto& xd = x.data();
  std::vector<double> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      const std::size_t yi = y / factor;
      for (std::size_t xx = 0; xx < wo; ++xx) {
        out[(ch * ho + y) * wo + xx] = xd[(ch * h + yi) * w + xx / factor];
      }
    }
  }
  Shape out_shape{c, ho, wo};
  if (!g) return checked("upsample_nearest", std::move(out_shape), std::move(out));

  return g->record(
      "upsample_nearest", std::move(out_shape), std::move(out), {&x},
      [c, h, w, ho, wo, factor](Graph& gg, std::span<const int> in,
                                const std::vector<double>& gd) {
        if (in[0] < 0) return;
        std::vector<double> gx(c * h * w, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < ho; ++y) {
            const std::size_t yi = y / factor;
            for (std::size_t xx = 0; xx < wo; ++xx) {
              gx[(ch * h + yi) * w + xx / factor] += gd[(ch * ho + y) * wo + xx];
            }
          }
        }
        gg.accumulate(in[0], gx);
      });
}

Tensor loss_seg(Graph* g, const Tensor& logits, const Tensor& labels, bool normalize) {
  if (logits.rank() != 3) {
    throw ShapeError("segmentation loss expects logits [K, H, W], got " +
                     shape_str(logits.shape()));
  }
  if (labels.rank() != 2 || labels.dim(0) != logits.dim(1) ||
      labels.dim(1) != logits.dim(2)) {
    throw ShapeError("segmentation labels must be [H, W] matching the logits, got " +
                     shape_str(labels.shape()));
  }
  const std::size_t k = logits.dim(0);
  const std::size_t hw = logits.dim(1) * logits.dim(2);
  const auto& lg = logits.data();
  const auto& lb = labels.data();

  std::size_t labeled = 0;
  double total = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    const double lv = lb[p];
    if (lv == kIgnoreLabel) continue;
    if (!(lv >= 0.0) || lv >= static_cast<double>(k) || std::floor(lv) != lv) {
      throw ValueError("segmentation labels must be integer class ids below the "
                       "class count, or 255 for ignored pixels");
    }
    const std::size_t y = static_cast<std::size_t>(lv);
    double m = lg[p];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, lg[c * hw + p]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(lg[c * hw + p] - m);
    total += m + std::log(z) - lg[y * hw + p];
    ++labeled;
  }
  if (labeled == 0) throw ValueError("segmentation loss has no labeled pixels");
  const double inv = normalize ? 1.0 / static_cast<double>(labeled) : 1.0;
  std::vector<double> out{total * inv};
  if (!g) return checked("loss_seg", {1}, std::move(out));

  auto ls = logits.payload();
  auto ys = labels.payload();
  return g->record(
      "loss_seg", {1}, std::move(out), {&logits},
      [ls, ys, k, hw, inv](Graph& gg, std::span<const int> in,
                           const std::vector<double>& gd) {
        if (in[0] < 0) return;
        const double up = gd[0] * inv;
        std::vector<double> gx(k * hw, 0.0);
        for (std::size_t p = 0; p < hw; ++p) {
          const double lv = (*ys)[p];
          if (lv == kIgnoreLabel) continue;
          const std::size_t y = static_cast<std::size_t>(lv);
          double m = (*ls)[p];
          for (std::size_t c = 1; c < k; ++c) m = std::max(m, (*ls)[c * hw + p]);
          double z = 0.0;
          for (std::size_t c = 0; c < k; ++c) z += std::exp((*ls)[c * hw + p] - m);
          for (std::size_t c = 0; c < k; ++c) {
            const double soft = std::exp((*ls)[c * hw + p] - m) / z;
            gx[c * hw + p] += up * (soft - (c == y ? 1.0 : 0.0));
          }
        }
        gg.accumulate(in[0], gx);
      });
}

Tensor loss_amp(Graph* g, const std::vector<std::pair<Tensor, Tensor>>& amp_pairs,
                bool normalize, std::vector<Tensor>* stage_terms) {
  if (amp_pairs.size() != 4) {
    throw ValueError("amplitude drift loss expects exactly four stage pairs");
  }
  Tensor weighted;
  for (std::size_t t = 0; t < 4; ++t) {
    const Tensor& before = amp_pairs[t].first;
    const Tensor& after = amp_pairs[t].second;
    Tensor term = ops::sum_sq(g, ops::sub(g, after, before));
    if (normalize) {
      term = ops::scale(g, term, 1.0 / static_cast<double>(before.numel()));
    }
    if (stage_terms) stage_terms->push_back(term);
    Tensor contrib = ops::scale(g, term, kAlpha[t]);
    weighted = t == 0 ? contrib : ops::add(g, weighted, contrib);
  }
  return ops::scale(g, weighted, 0.25);
}

LossBreakdown loss_total(double seg, double aux, double amp, double lambda1,
                         double lambda2) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw ValueError("loss weights must be nonnegative");
  }
  LossBreakdown b;
  b.seg = seg;
  b.aux = aux;
  b.amp = amp;
  b.total = seg + lambda1 * aux + lambda2 * amp;
  return b;
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

EncoderParams make_encoder(std::size_t in_channels, std::size_t c0, Rng& rng) {
  if (in_channels == 0 || c0 == 0) {
    throw ValueError("encoder needs at least one input and one base channel");
  }
  EncoderParams p;
  p.stem0 = make_conv(in_channels, c0, rng);
  p.stem1 = make_conv(c0, c0, rng);
  p.down1 = make_conv(c0, 2 * c0, rng);
  p.down2 = make_conv(2 * c0, 4 * c0, rng);
  p.down3 = make_conv(4 * c0, 8 * c0, rng);
  return p;
}

void for_each_param(EncoderParams& p, const std::string& prefix,
                    const fusion::ParamVisitor& fn) {
  visit_conv(p.stem0, prefix + ".stem0", fn);
  visit_conv(p.stem1, prefix + ".stem1", fn);
  visit_conv(p.down1, prefix + ".down1", fn);
  visit_conv(p.down2, prefix + ".down2", fn);
  visit_conv(p.down3, prefix + ".down3", fn);
}

std::array<Tensor, 4> encoder_forward(Graph* g, const Tensor& img,
                                      const EncoderParams& p) {
  if (img.rank() != 3) {
    throw ShapeError("encoder expects [C, H, W], got " + shape_str(img.shape()));
  }
  if (img.dim(1) == 0 || img.dim(2) == 0 || img.dim(1) % 32 != 0 ||
      img.dim(2) % 32 != 0) {
    throw ShapeError("indivisible input size: spatial dims must be positive "
                     "multiples of 32, got " + shape_str(img.shape()));
  }
  Tensor t = ops::leaky_relu(g, conv3x3s2(g, img, p.stem0.w, p.stem0.b));
  std::array<Tensor, 4> f;
  f[0] = ops::leaky_relu(g, conv3x3s2(g, t, p.stem1.w, p.stem1.b));
  f[1] = ops::leaky_relu(g, conv3x3s2(g, f[0], p.down1.w, p.down1.b));
  f[2] = ops::leaky_relu(g, conv3x3s2(g, f[1], p.down2.w, p.down2.b));
  f[3] = ops::leaky_relu(g, conv3x3s2(g, f[2], p.down3.w, p.down3.b));
  return f;
}

// ---------------------------------------------------------------------------
// decoder
// ---------------------------------------------------------------------------

DecoderParams make_decoder(std::size_t c0, std::size_t num_classes, Rng& rng) {
  if (c0 == 0 || num_classes == 0) {
    throw ValueError("decoder needs at least one channel and one class");
  }
  DecoderParams p;
  for (std::size_t t = 0; t < 4; ++t) {
    const std::size_t ct = c0 << t;
    p.proj_w[t] = glorot({c0, ct}, ct, c0, rng);
    p.proj_b[t] = Tensor::zeros({c0});
  }
  p.head_w = glorot({num_classes, c0}, c0, num_classes, rng);
  p.head_b = Tensor::zeros({num_classes});
  p.aux_w = glorot({num_classes, 4 * c0}, 4 * c0, num_classes, rng);
  p.aux_b = Tensor::zeros({num_classes});
  return p;
}

void for_each_param(DecoderParams& p, const std::string& prefix,
                    const fusion::ParamVisitor& fn) {
  for (std::size_t t = 0; t < 4; ++t) {
    const std::string stem = prefix + ".proj" + std::to_string(t);
    fn(stem + "_w", p.proj_w[t]);
    fn(stem + "_b", p.proj_b[t]);
  }
  fn(prefix + ".head_w", p.head_w);
  fn(prefix + ".head_b", p.head_b);
  fn(prefix + ".aux_w", p.aux_w);
  fn(prefix + ".aux_b", p.aux_b);
}

DecoderOut decoder_forward(Graph* g, const std::array<Tensor, 4>& fused,
                           const DecoderParams& p) {
  for (std::size_t t = 0; t < 4; ++t) {
    if (fused[t].rank() != 3) {
      throw ShapeError("decoder stage " + std::to_string(t) +
                       " must be [C, H, W], got " + shape_str(fused[t].shape()));
    }
    if (fused[t].dim(0) != p.proj_w[t].dim(1)) {
      throw ShapeError("decoder stage " + std::to_string(t) + " channel mismatch: " +
                       shape_str(fused[t].shape()));
    }
    if (fused[t].dim(1) << t != fused[0].dim(1) ||
        fused[t].dim(2) << t != fused[0].dim(2)) {
      throw ShapeError("decoder stage " + std::to_string(t) +
                       " is not a power-of-two reduction of stage 0");
    }
  }
  Tensor acc = ops::conv1x1(g, fused[0], p.proj_w[0], p.proj_b[0]);
  for (std::size_t t = 1; t < 4; ++t) {
    Tensor up = upsample_nearest(
        g, ops::conv1x1(g, fused[t], p.proj_w[t], p.proj_b[t]),
        static_cast<std::size_t>(1) << t);
    acc = ops::add(g, acc, up);
  }
  DecoderOut out;
  out.logits = upsample_nearest(g, ops::conv1x1(g, acc, p.head_w, p.head_b), 4);
  out.aux_logits =
      upsample_nearest(g, ops::conv1x1(g, fused[2], p.aux_w, p.aux_b), 16);
  return out;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

Model make_model(const ModelConfig& cfg) {
  if (cfg.stages != 4) throw ValueError("the stage pyramid is fixed at four stages");
  if (cfg.base_channels == 0) throw ValueError("base_channels must be >= 1");
  if (cfg.num_classes == 0) throw ValueError("num_classes must be >= 1");
  if (cfg.psc_depth == 0) throw ValueError("psc_depth must be >= 1");
  if (cfg.psc_reduction == 0 || cfg.base_channels % cfg.psc_reduction != 0) {
    throw ValueError("psc_reduction must divide base_channels");
  }
  if (!(cfg.asf_tau > 0.0)) throw ValueError("asf_tau must be positive");
  if (!(cfg.lambda1 >= 0.0) || !(cfg.lambda2 >= 0.0)) {
    throw ValueError("loss weights must be nonnegative");
  }
  Model m;
  m.cfg = cfg;
  Rng root(cfg.seed);
  Rng r_rgb = root.fork(1);
  Rng r_sar = root.fork(2);
  Rng r_dec = root.fork(3);
  m.enc_rgb = make_encoder(3, cfg.base_channels, r_rgb);
  m.enc_sar = make_encoder(1, cfg.base_channels, r_sar);
  if (!cfg.fusion_add) {
    for (std::size_t t = 0; t < 4; ++t) {
      Rng r_blk = root.fork(10 + t);
      m.blocks.push_back(fusion::make_pad_block(
          cfg.base_channels << t, t, r_blk, cfg.psc_depth, cfg.psc_reduction,
          cfg.asf_radius_init, cfg.asf_tau));
    }
  }
  m.dec = make_decoder(cfg.base_channels, cfg.num_classes, r_dec);
  return m;
}

void for_each_param(Model& m, const fusion::ParamVisitor& fn) {
  for_each_param(m.enc_rgb, "rgb", fn);
  for_each_param(m.enc_sar, "sar", fn);
  for (std::size_t t = 0; t < m.blocks.size(); ++t) {
    fusion::for_each_param(m.blocks[t], "stage" + std::to_string(t), fn);
  }
  for_each_param(m.dec, "dec", fn);
}

std::size_t param_count(Model& m) {
  std::size_t n = 0;
  for_each_param(m, [&n](const std::string&, Tensor& v) { n += v.numel(); });
  return n;
}

Model bind(Graph& g, const Model& m) {
  Model bound = m;
  for_each_param(bound, [&g](const std::string&, Tensor& v) { v = g.leaf(v); });
  return bound;
}

std::vector<Parameter> snapshot(Model& m) {
  std::vector<Parameter> out;
  for_each_param(m, [&out](const std::string& name, Tensor& v) {
    out.push_back(Parameter{name, v.detached(), Tensor{}});
  });
  return out;
}

void load_snapshot(Model& m, const std::vector<Parameter>& params) {
  std::map<std::string, const Parameter*> by_name;
  for (const Parameter& p : params) {
    if (!by_name.emplace(p.name, &p).second) {
      throw ValueError("checkpoint repeats parameter '" + p.name + "'");
    }
  }
  std::size_t used = 0;
  for_each_param(m, [&](const std::string& name, Tensor& v) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ValueError("checkpoint is missing parameter '" + name + "'");
    }
    if (it->second->value.shape() != v.shape()) {
      throw ShapeError("checkpoint parameter '" + name + "' has shape " +
                       shape_str(it->second->value.shape()) + ", expected " +
                       shape_str(v.shape()));
    }
    v = it->second->value.detached();
    ++used;
  });
  if (used != by_name.size()) {
    std::set<std::string> known;
    for_each_param(m, [&known](const std::string& name, Tensor&) {
      known.insert(name);
    });
    for (const Parameter& p : params) {
      if (!known.count(p.name)) {
        throw ValueError("checkpoint has unknown parameter '" + p.name + "'");
      }
    }
  }
}

ForwardOut model_forward(Graph* g, const Model& m, const Tensor& rgb,
                         const Tensor& sar) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("model expects rgb [3, H, W], got " + shape_str(rgb.shape()));
  }
  if (sar.rank() != 3 || sar.dim(0) != 1) {
    throw ShapeError("model expects sar [1, H, W], got " + shape_str(sar.shape()));
  }
  if (rgb.dim(1) != sar.dim(1) || rgb.dim(2) != sar.dim(2)) {
    throw ShapeError("rgb and sar must share the spatial size, got " +
                     shape_str(rgb.shape()) + " vs " + shape_str(sar.shape()));
  }
  std::array<Tensor, 4> f_rgb = encoder_forward(g, rgb, m.enc_rgb);
  std::array<Tensor, 4> f_sar = encoder_forward(g, sar, m.enc_sar);

  ForwardOut out;
  std::array<Tensor, 4> fused;
  for (std::size_t t = 0; t < 4; ++t) {
    if (m.cfg.fusion_add) {
      fused[t] = ops::add(g, f_rgb[t], f_sar[t]);
    } else {
      fusion::PadBlockOut blk =
          fusion::pad_block_forward(g, f_rgb[t], f_sar[t], m.blocks[t]);
      fused[t] = blk.fused;
      out.amp_pairs.emplace_back(blk.amp_before, blk.amp_after);
    }
  }
  DecoderOut dec = decoder_forward(g, fused, m.dec);
  out.logits = dec.logits;
  out.aux_logits = dec.aux_logits;
  return out;
}

BatchLoss batch_loss(Graph& g, const Model& bound, const Batch& batch) {
  const std::vector<SampleView> samples = split_batch(batch);
  const std::size_t n = samples.size();
  const bool norm = bound.cfg.normalize_losses;

  Tensor seg_sum, aux_sum, amp_sum;
  std::array<double, 4> stage_sum{};
  for (std::size_t i = 0; i < n; ++i) {
    ForwardOut fw = model_forward(&g, bound, samples[i].rgb, samples[i].sar);
    Tensor seg = loss_seg(&g, fw.logits, samples[i].labels, norm);
    Tensor aux = loss_seg(&g, fw.aux_logits, samples[i].labels, norm);
    seg_sum = i == 0 ? seg : ops::add(&g, seg_sum, seg);
    aux_sum = i == 0 ? aux : ops::add(&g, aux_sum, aux);
    if (!bound.cfg.fusion_add) {
      std::vector<Tensor> terms;
      Tensor amp = loss_amp(&g, fw.amp_pairs, norm, &terms);
      amp_sum = i == 0 ? amp : ops::add(&g, amp_sum, amp);
      for (std::size_t t = 0; t < 4; ++t) stage_sum[t] += terms[t].item();
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor seg_avg = ops::scale(&g, seg_sum, inv_n);
  Tensor aux_avg = ops::scale(&g, aux_sum, inv_n);

  BatchLoss out;
  Tensor total = ops::add(&g, seg_avg, ops::scale(&g, aux_avg, bound.cfg.lambda1));
  double amp_value = 0.0;
  if (!bound.cfg.fusion_add) {
    Tensor amp_avg = ops::scale(&g, amp_sum, inv_n);
    amp_value = amp_avg.item();
    total = ops::add(&g, total, ops::scale(&g, amp_avg, bound.cfg.lambda2));
  }
  out.total = total;
  out.breakdown = loss_total(seg_avg.item(), aux_avg.item(), amp_value,
                             bound.cfg.lambda1, bound.cfg.lambda2);
  for (std::size_t t = 0; t < 4; ++t) out.breakdown.amp_stage[t] = stage_sum[t] * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

Tensor predict_labels(const Tensor& logits) {
  if (logits.rank() != 3 || logits.dim(0) == 0) {
    throw ShapeError("predict_labels expects logits [K, H, W], got " +
                     shape_str(logits.shape()));
  }
  const std::size_t k = logits.dim(0);
  const std::size_t hw = logits.dim(1) * logits.dim(2);
  const auto& lg = logits.data();
  std::vector<double> out(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    double bv = lg[p];
    for (std::size_t c = 1; c < k; ++c) {
      if (lg[c * hw + p] > bv) {
        bv = lg[c * hw + p];
        best = c;
      }
    }
    out[p] = static_cast<double>(best);
  }
  return Tensor({logits.dim(1), logits.dim(2)}, std::move(out));
}

Metrics metrics(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                std::size_t num_classes) {
  if (pred.size() != gt.size()) {
    throw ValueError("prediction and ground-truth lists differ in length");
  }
  if (pred.empty() || num_classes == 0) throw ValueError("empty evaluation set");
  const std::size_t k = num_classes;

  auto class_of = [k](double v, const char* who) {
    if (!(v >= 0.0) || v >= static_cast<double>(k) || std::floor(v) != v) {
      throw ValueError(std::string(who) +
                       " labels must be integer class ids below the class count");
    }
    return static_cast<std::size_t>(v);
  };

  std::vector<std::size_t> conf(k * k, 0);  // row = ground truth, col = prediction
  double kappa_sum = 0.0;
  std::size_t kappa_n = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].rank() != 2 || pred[s].shape() != gt[s].shape()) {
      throw ShapeError("prediction/ground-truth shape mismatch at sample " +
                       std::to_string(s));
    }
    const auto& pv = pred[s].data();
    const auto& gv = gt[s].data();
    std::vector<std::size_t> local(k * k, 0);
    for (std::size_t p = 0; p < pv.size(); ++p) {
      if (gv[p] == kIgnoreLabel) continue;
      const std::size_t r = class_of(gv[p], "ground-truth");
      const std::size_t c = class_of(pv[p], "prediction");
      ++local[r * k + c];
    }
    std::size_t ln = 0, ltr = 0;
    std::vector<std::size_t> row(k, 0), col(k, 0);
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t v = local[r * k + c];
        conf[r * k + c] += v;
        ln += v;
        row[r] += v;
        col[c] += v;
        if (r == c) ltr += v;
      }
    }
    if (ln == 0) continue;  // fully ignored sample contributes no kappa
    const double dn = static_cast<double>(ln);
    const double po = static_cast<double>(ltr) / dn;
    double pe = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      pe += static_cast<double>(row[c]) * static_cast<double>(col[c]) / (dn * dn);
    }
    kappa_sum += pe >= 1.0 ? (po >= 1.0 ? 1.0 : 0.0) : (po - pe) / (1.0 - pe);
    ++kappa_n;
  }

  std::size_t total = 0, trace = 0;
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      total += conf[r * k + c];
      if (r == c) trace += conf[r * k + c];
    }
  }
  if (total == 0) throw ValueError("empty evaluation set");

  Metrics m;
  m.evaluated_pixels = total;
  m.oa = static_cast<double>(trace) / static_cast<double>(total);
  m.per_class_iou.assign(k, -1.0);
  double iou_sum = 0.0, f1_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = conf[c * k + c], fp = 0, fn = 0;
    for (std::size_t r = 0; r < k; ++r) {
      if (r != c) {
        fp += conf[r * k + c];
        fn += conf[c * k + r];
      }
    }
    const std::size_t denom = tp + fp + fn;
    if (denom == 0) continue;  // absent from both; stays -1 and uncounted
    m.per_class_iou[c] =
        static_cast<double>(tp) / static_cast<double>(denom);
    iou_sum += m.per_class_iou[c];
    f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(denom + tp);
    ++present;
  }
  m.miou = iou_sum / static_cast<double>(present);
  m.mf1 = f1_sum / static_cast<double>(present);
  m.mkappa = kappa_n ? kappa_sum / static_cast<double>(kappa_n) : 0.0;
  return m;
}

Metrics evaluate(const Model& m, const std::vector<Batch>& dataset) {
  std::vector<Tensor> preds, gts;
  for (const Batch& b : dataset) {
    for (const SampleView& s : split_batch(b)) {
      ForwardOut fw = model_forward(nullptr, m, s.rgb, s.sar);
      preds.push_back(predict_labels(fw.logits));
      gts.push_back(s.labels);
    }
  }
  if (preds.empty()) throw ValueError("empty evaluation set");
  return metrics(preds, gts, m.cfg.num_classes);
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

std::vector<Batch> synth_dataset(std::size_t n, std::size_t size,
                                 std::size_t num_classes, std::uint64_t seed) {
  if (n == 0) throw ValueError("synthetic dataset needs at least one sample");
  if (num_classes == 0) throw ValueError("synthetic dataset needs at least one class");
  if (size == 0 || size % 32 != 0) {
    throw ValueError("synthetic image size must be a positive multiple of 32");
  }
  const double golden = 0.618033988749895;
  const double denom = static_cast<double>(std::max<std::size_t>(num_classes - 1, 1));
  std::vector<std::array<double, 3>> palette(num_classes);
  std::vector<double> mu(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double h = 0.13 + static_cast<double>(c) * golden;
    h -= std::floor(h);
    const double lum = num_classes == 1
                           ? 0.5
                           : 0.25 + 0.5 * static_cast<double>(c) / denom;
    palette[c] = class_color(lum, 2.0 * kPi * h, 0.12);
    mu[c] = 0.2 + 0.6 * static_cast<double>(c) / denom;
  }

  Rng rng(seed);
  std::vector<Batch> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> lab(size * size,
                            static_cast<double>(rng.below(num_classes)));
    // Foreground objects are single cells of the 4-pixel grid: their spectra
    // are nearly flat, so the corpus statistics stay homogeneous across
    // frequency bands and sampling rates.
    const std::size_t npatch = 3 + rng.below(3);
    for (std::size_t r = 0; r < npatch; ++r) {
      const double cls = static_cast<double>(rng.below(num_classes));
      const std::size_t y0 = 4 * rng.below((size - 4) / 4 + 1);
      const std::size_t x0 = 4 * rng.below((size - 4) / 4 + 1);
      for (std::size_t y = y0; y < y0 + 4; ++y) {
        for (std::size_t x = x0; x < x0 + 4; ++x) lab[y * size + x] = cls;
      }
    }

    // Both modalities render the same micro-texture: a wide-band component
    // that keeps their spectral phases correlated at every frequency, the
    // way co-registered sensors share the scene's fine structure.
    std::vector<double> tex(size * size);
    for (auto& t : tex) t = rng.normal();

    std::vector<double> rgb(3 * size * size);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t p = 0; p < size * size; ++p) {
        const std::size_t c = static_cast<std::size_t>(lab[p]);
        rgb[ch * size * size + p] =
            clamp01(palette[c][ch] + 0.05 * tex[p] + 0.05 * rng.normal());
      }
    }
    std::vector<double> sar(size * size);
    for (std::size_t p = 0; p < size * size; ++p) {
      const std::size_t c = static_cast<std::size_t>(lab[p]);
      // 4-look multiplicative speckle over the class intensity
      sar[p] = std::max(0.0, mu[c] * rng.gamma(4.0) / 4.0 + 0.05 * tex[p]);
    }
    // The outermost ring is excluded from supervision after rendering, so the
    // images still show the true classes there.
    for (std::size_t x = 0; x < size; ++x) {
      lab[x] = kIgnoreLabel;
      lab[(size - 1) * size + x] = kIgnoreLabel;
      lab[x * size] = kIgnoreLabel;
      lab[x * size + size - 1] = kIgnoreLabel;
    }

    Batch b;
    b.rgb = Tensor({1, 3, size, size}, std::move(rgb));
    b.sar = Tensor({1, 1, size, size}, std::move(sar));
    b.labels = Tensor({1, size, size}, std::move(lab));
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

TrainResult train(const ModelConfig& cfg, const std::vector<Batch>& dataset,
                  std::size_t iters, double lr) {
  if (iters == 0) throw ValueError("training needs at least one iteration");
  if (dataset.empty()) throw ValueError("training dataset is empty");
  if (!std::isfinite(lr) || lr < 0.0) {
    throw ValueError("learning rate must be finite and nonnegative");
  }
  const std::size_t eval_n = dataset.size() >= 4 ? dataset.size() / 4 : 0;
  const std::size_t train_n = dataset.size() - eval_n;
  const std::vector<Batch> trainset(dataset.begin(), dataset.begin() + train_n);
  const std::vector<Batch> evalset(dataset.begin() + train_n, dataset.end());

  Model model = make_model(cfg);
  std::vector<Tensor*> params;
  for_each_param(model, [&params](const std::string&, Tensor& v) {
    params.push_back(&v);
  });
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    m1[j].assign(params[j]->numel(), 0.0);
    m2[j].assign(params[j]->numel(), 0.0);
  }

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  TrainResult res;
  res.log.reserve(iters);
  for (std::size_t it = 0; it < iters; ++it) {
    const Batch& batch = trainset[it % train_n];
    Graph g;
    Model bound = bind(g, model);
    BatchLoss bl;
    try {
      bl = batch_loss(g, bound, batch);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(it) +
                         ": " + e.what());
    }
    if (!std::isfinite(bl.breakdown.total)) {
      throw NumericError("training diverged at iteration " + std::to_string(it));
    }
    res.log.push_back(bl.breakdown);
    g.backward(bl.total);

    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for_each_param(bound, [&g, &grads](const std::string&, Tensor& v) {
      grads.push_back(g.grad(v));
    });

    const double t = static_cast<double>(it + 1);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t j = 0; j < params.size(); ++j) {
      const auto& gv = grads[j].data();
      const auto& old_v = params[j]->data();
      std::vector<double> nv(old_v.size());
      for (std::size_t i = 0; i < nv.size(); ++i) {
        m1[j][i] = kBeta1 * m1[j][i] + (1.0 - kBeta1) * gv[i];
        m2[j][i] = kBeta2 * m2[j][i] + (1.0 - kBeta2) * gv[i] * gv[i];
        const double step =
            lr * (m1[j][i] / c1) / (std::sqrt(m2[j][i] / c2) + kEps);
        nv[i] = old_v[i] - step;
      }
      *params[j] = Tensor(params[j]->shape(), std::move(nv));
    }
  }

  res.train_count = train_n;
  res.eval_count = eval_n ? eval_n : train_n;
  res.train_metrics = evaluate(model, trainset);
  res.eval_metrics = eval_n ? evaluate(model, evalset) : res.train_metrics;
  res.model = std::move(model);
  return res;
}

}  // namespace pad::net

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pad/rng.hpp"
#include "pad/tensor.hpp"

namespace pad::fusion {

// ---------------------------------------------------------------------------
// parameter bundles
// ---------------------------------------------------------------------------

/// Spatial gating fusion: a single-channel sigmoid gate S weighs the two
/// inputs pixel-wise before a 1x1 merge convolution.
struct ScfParams {
  Tensor att_w;   // [1, 2C]
  Tensor att_b;   // [1]
  Tensor fuse_w;  // [C, 2C]
  Tensor fuse_b;  // [C]
};

/// Phase-correction stack: d 1x1 convolutions (C -> C/r -> ... -> C/r), each
/// followed by leaky ReLU, then a final 1x1 to a single-channel sigmoid map.
struct PscParams {
  std::vector<Tensor> stack_w;  // [d] entries, first [C/r, C] then [C/r, C/r]
  std::vector<Tensor> stack_b;  // [d] entries, each [C/r]
  Tensor final_w;               // [1, C/r]
  Tensor final_b;               // [1]
};

/// Amplitude fusion with a trainable radial boundary. The raw radius maps
/// through a sigmoid so the effective radius stays in (0, 1).
struct AsfParams {
  Tensor radius_raw;  // [1]
  double tau = 10.0;  // soft-mask temperature, > 0
  Tensor mlp_w1;      // [C, C]
  Tensor mlp_b1;      // [C]
  Tensor mlp_w2;      // [C, C]
  Tensor mlp_b2;      // [C]
  Tensor fuse_w;      // [C, 2C]
  Tensor fuse_b;      // [C]
};

/// One fusion block: gate -> spectral decompose -> (phase ops, amplitude
/// ops) -> recompose. Each pyramid stage owns an independent instance.
struct PadBlockParams {
  ScfParams scf;
  PscParams psc;
  AsfParams asf;
  std::size_t stage_index = 0;
};

// ---------------------------------------------------------------------------
// initialization and parameter traversal
// ---------------------------------------------------------------------------

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
ScfParams make_scf(std::size_t c, Rng& rng);
PscParams make_psc(std::size_t c, std::size_t depth, std::size_t reduction, Rng& rng);
AsfParams make_asf(std::size_t c, double radius_raw_init, double tau, Rng& rng);
PadBlockParams make_pad_block(std::size_t c, std::size_t stage, Rng& rng,
                              std::size_t psc_depth = 2,
                              std::size_t psc_reduction = 4,
                              double radius_raw_init = 0.1, double tau = 10.0);

/// Visit every learnable tensor with a stable hierarchical name. Traversal
/// order is deterministic; optimizers and checkpoints rely on it.
using ParamVisitor = std::function<void(const std::string& name, Tensor& value)>;
void for_each_param(ScfParams& p, const std::string& prefix, const ParamVisitor& fn);
void for_each_param(PscParams& p, const std::string& prefix, const ParamVisitor& fn);
void for_each_param(AsfParams& p, const std::string& prefix, const ParamVisitor& fn);
void for_each_param(PadBlockParams& p, const std::string& prefix, const ParamVisitor& fn);

// ---------------------------------------------------------------------------
// forward operations
// ---------------------------------------------------------------------------

/// Normalized radial distance over a shifted half-spectrum grid [1, H, W_h]:
/// zero at the low-frequency center (row floor(H/2), column 0), exactly 1 at
/// the farthest corner. Degenerate 1x1 grids yield 0.
Tensor radial_dist(std::size_t h, std::size_t w_h);

/// S = sigmoid(conv1x1(concat(x1, x2))); out = conv1x1(concat(S*x1, (1-S)*x2)).
Tensor scf_forward(Graph* g, const Tensor& x1, const Tensor& x2, const ScfParams& p);

/// P' = P * (1 + PCM) with PCM in (0,1) broadcast across channels, so every
/// phase entry is scaled by a factor strictly inside (1, 2).
Tensor psc_forward(Graph* g, const Tensor& P, const PscParams& p);

/// Residual high-frequency amplitude refinement:
/// Mask = sigmoid((Dist - sigmoid(radius_raw)) * tau); A_hi = mlp2(A * Mask);
/// out = A + conv1x1(concat(A, A_hi)). All-zero weights reduce to identity.
Tensor asf_forward(Graph* g, const Tensor& A, const AsfParams& p);

struct PadBlockOut {
  Tensor fused;       // [C, H, W]
  Tensor amp_before;  // [C, H, W_h]
  Tensor amp_after;   // [C, H, W_h]
};

/// Full block: gate the two inputs, split each channel into amplitude and
/// phase, refine both, recompose. Returns the pre/post amplitudes so the
/// training loss can penalize amplitude drift. imag_residual (optional)
/// receives the worst relative imaginary leakage of the recomposition.
PadBlockOut pad_block_forward(Graph* g, const Tensor& x_rgb, const Tensor& x_sar,
                              const PadBlockParams& p,
                              double* imag_residual = nullptr);

}  // namespace pad::fusion

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pad/fusion.hpp"
#include "pad/rng.hpp"
#include "pad/tensor.hpp"

namespace pad::net {

// ---------------------------------------------------------------------------
// configuration and records
// ---------------------------------------------------------------------------

/// Hyper-parameters of the toy dual-branch segmentation model. Stage t runs
/// at resolution 1/(4*2^t) with base_channels*2^t channels; the pyramid
/// depth is fixed at four stages.
struct ModelConfig {
  std::size_t base_channels = 8;
  std::size_t stages = 4;  // fixed; validated, not variable
  std::size_t num_classes = 3;
  std::size_t psc_depth = 2;
  std::size_t psc_reduction = 4;
  double asf_radius_init = 0.1;
  double asf_tau = 10.0;
  double lambda1 = 0.4;  // auxiliary-head weight
  double lambda2 = 0.1;  // amplitude-consistency weight
  std::uint64_t seed = 42;
  bool fusion_add = false;       // ablation: plain addition replaces the fusion block
  bool normalize_losses = true;  // divide CE by |labeled| and each drift term by count
};

/// One mini-batch of co-registered samples. labels holds integer class ids
/// as doubles; 255 marks ignored pixels.
struct Batch {
  Tensor rgb;     // [B, 3, H, W]
  Tensor sar;     // [B, 1, H, W]
  Tensor labels;  // [B, H, W], values in [0, num_classes) or 255
};

/// Scalar loss terms of one forward pass. total = seg + lambda1*aux +
/// lambda2*amp holds to 1e-12. amp_stage keeps the unweighted per-stage
/// amplitude-drift terms next to their depth-progressive weights alpha.
struct LossBreakdown {
  double seg = 0.0;
  double aux = 0.0;
  double amp = 0.0;
  double total = 0.0;
  std::array<double, 4> amp_stage{};
  std::array<double, 4> alpha{0.5, 2.0 / 3.0, 5.0 / 6.0, 1.0};
};

// ---------------------------------------------------------------------------
// tape operations used by the toy network
// ---------------------------------------------------------------------------

/// 3x3 convolution, stride 2, zero padding 1: x [Ci, H, W] with
/// w [Co, Ci, 3, 3], b [Co] -> [Co, ceil(H/2), ceil(W/2)]. Differentiable
/// w.r.t. x, w, b through the tape.
Tensor conv3x3s2(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b);

/// Nearest-neighbor upsample of [C, H, W] by an integer factor; each input
/// value fills a factor x factor block. Gradient sums each block.
Tensor upsample_nearest(Graph* g, const Tensor& x, std::size_t factor);

/// Cross entropy of logits [K, H, W] against labels [H, W], skipping pixels
/// labeled 255. Sums -log softmax(logits)[y] over labeled pixels; divided by
/// their count when normalize is set. Errors when no pixel is labeled.
Tensor loss_seg(Graph* g, const Tensor& logits, const Tensor& labels,
                bool normalize = true);

/// Depth-progressive amplitude drift: (1/4) * sum_t alpha_t * ||A'_t -
/// A_t||_F^2 with alpha = {0.5, 2/3, 5/6, 1}; each squared norm is divided
/// by its element count when normalize is set. Exactly four (before, after)
/// pairs. When stage_terms is given the four unweighted per-stage term
/// tensors are appended to it.
Tensor loss_amp(Graph* g, const std::vector<std::pair<Tensor, Tensor>>& amp_pairs,
                bool normalize = true, std::vector<Tensor>* stage_terms = nullptr);

/// Combine already-evaluated scalar terms; weights must be nonnegative.
LossBreakdown loss_total(double seg, double aux, double amp, double lambda1,
                         double lambda2);

// ---------------------------------------------------------------------------
// encoder / decoder
// ---------------------------------------------------------------------------

struct Conv3x3 {
  Tensor w;  // [Co, Ci, 3, 3]
  Tensor b;  // [Co]
};

/// One branch backbone: two stride-2 stem convolutions to /4, then one
/// stride-2 convolution per remaining stage, each followed by leaky ReLU.
struct EncoderParams {
  Conv3x3 stem0;  // in -> C0
  Conv3x3 stem1;  // C0 -> C0
  Conv3x3 down1;  // C0 -> 2C0
  Conv3x3 down2;  // 2C0 -> 4C0
  Conv3x3 down3;  // 4C0 -> 8C0
};

EncoderParams make_encoder(std::size_t in_channels, std::size_t c0, Rng& rng);
void for_each_param(EncoderParams& p, const std::string& prefix,
                    const fusion::ParamVisitor& fn);

/// Four feature maps at resolutions /4, /8, /16, /32 with channels
/// C0*{1,2,4,8}. img is [Ci, H, W] with H and W divisible by 32.
std::array<Tensor, 4> encoder_forward(Graph* g, const Tensor& img,
                                      const EncoderParams& p);

/// Shared decoder: every stage is projected to C0 channels by a 1x1
/// convolution, upsampled to the /4 grid, summed, classified by a 1x1 head
/// and upsampled to full resolution. The auxiliary head classifies the
/// stage-2 features directly.
struct DecoderParams {
  std::array<Tensor, 4> proj_w;  // stage t: [C0, C0*2^t]
  std::array<Tensor, 4> proj_b;  // [C0]
  Tensor head_w;                 // [num_classes, C0]
  Tensor head_b;                 // [num_classes]
  Tensor aux_w;                  // [num_classes, 4*C0]
  Tensor aux_b;                  // [num_classes]
};

DecoderParams make_decoder(std::size_t c0, std::size_t num_classes, Rng& rng);
void for_each_param(DecoderParams& p, const std::string& prefix,
                    const fusion::ParamVisitor& fn);

struct DecoderOut {
  Tensor logits;      // [num_classes, H, W]
  Tensor aux_logits;  // [num_classes, H, W]
};
DecoderOut decoder_forward(Graph* g, const std::array<Tensor, 4>& fused,
                           const DecoderParams& p);

// ---------------------------------------------------------------------------
// full model
// ---------------------------------------------------------------------------

/// Two independent encoder branches, one fusion block per stage (empty when
/// the additive ablation is selected), and the shared decoder.
struct Model {
  ModelConfig cfg;
  EncoderParams enc_rgb;
  EncoderParams enc_sar;
  std::vector<fusion::PadBlockParams> blocks;  // 4 entries, or none for fusion_add
  DecoderParams dec;
};

Model make_model(const ModelConfig& cfg);
void for_each_param(Model& m, const fusion::ParamVisitor& fn);
std::size_t param_count(Model& m);

/// Copy of the model whose parameters are registered as tracked leaves of g.
Model bind(Graph& g, const Model& m);

/// Parameters flattened in traversal order (gradients left empty), and the
/// inverse: load values back by name with shape checks.
std::vector<Parameter> snapshot(Model& m);
void load_snapshot(Model& m, const std::vector<Parameter>& params);

struct ForwardOut {
  Tensor logits;      // [num_classes, H, W]
  Tensor aux_logits;  // [num_classes, H, W]
  // per-stage (amplitude before refinement, after); empty for fusion_add
  std::vector<std::pair<Tensor, Tensor>> amp_pairs;
};

/// One sample through both branches, per-stage fusion, and the decoder.
/// rgb is [3, H, W], sar [1, H, W], H and W divisible by 32.
ForwardOut model_forward(Graph* g, const Model& m, const Tensor& rgb,
                         const Tensor& sar);

/// Averaged composite loss of one batch on the tape, plus its breakdown.
struct BatchLoss {
  Tensor total;  // tracked scalar, root for backward()
  LossBreakdown breakdown;
};
BatchLoss batch_loss(Graph& g, const Model& bound, const Batch& batch);

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// Segmentation quality over an evaluation set. per_class_iou holds -1 for
/// classes absent from both prediction and ground truth; such classes are
/// excluded from the miou/mf1 means. mkappa averages per-sample kappa.
struct Metrics {
  double oa = 0.0;
  double miou = 0.0;
  double mf1 = 0.0;
  double mkappa = 0.0;
  std::vector<double> per_class_iou;
  std::size_t evaluated_pixels = 0;
};

/// Argmax over the class axis of [K, H, W]; ties pick the lowest class id.
Tensor predict_labels(const Tensor& logits);

/// Pooled confusion-matrix metrics; 255 ground-truth pixels are ignored.
/// pred and gt are parallel lists of [H, W] label maps.
Metrics metrics(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                std::size_t num_classes);

/// Forward every sample of every batch (no tape) and score the predictions.
Metrics evaluate(const Model& m, const std::vector<Batch>& dataset);

// ---------------------------------------------------------------------------
// synthetic data and training
// ---------------------------------------------------------------------------

/// Deterministic scenes: square foreground patches snapped to a 4-pixel grid
/// over a random background class. RGB renders a class palette (luminance
/// ordered like the SAR intensities) plus Gaussian noise; SAR renders class
/// intensities under 4-look gamma speckle on the same layout; both add one
/// shared micro-texture, so pairs are phase-consistent at all frequencies
/// while staying amplitude-divergent. The outermost pixel ring is labeled
/// 255. size must be divisible by 32.
std::vector<Batch> synth_dataset(std::size_t n, std::size_t size,
                                 std::size_t num_classes, std::uint64_t seed);

/// Adam-style training (beta1 0.9, beta2 0.999, eps 1e-8, constant rate) on
/// a round-robin sample schedule. When the dataset has at least four batches
/// the last quarter is held out for evaluation; otherwise the training split
/// doubles as the evaluation split. A non-finite loss aborts with the
/// offending iteration index.
struct TrainResult {
  Model model;
  std::vector<LossBreakdown> log;  // one entry per iteration
  Metrics train_metrics;
  Metrics eval_metrics;
  std::size_t train_count = 0;
  std::size_t eval_count = 0;
};
TrainResult train(const ModelConfig& cfg, const std::vector<Batch>& dataset,
                  std::size_t iters, double lr);

}  // namespace pad::net

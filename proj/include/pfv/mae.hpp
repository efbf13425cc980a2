#pragma once

#include <array>
#include <string>
#include <vector>

#include "pfv/optim.hpp"
#include "pfv/rng.hpp"
#include "pfv/tensor.hpp"
#include "pfv/vit.hpp"

namespace pfv {

// One masking decision over the patch grid. A plan is drawn per training
// step and shared by every image in that step's batch, which keeps the
// gather/scatter bookkeeping rank-2 and the run bitwise reproducible; fresh
// randomness comes from redrawing the plan each step.
struct MaskPlan {
  double ratio = 0.0;
  std::vector<int> visible_idx;  // ascending
  std::vector<int> masked_idx;   // ascending, disjoint from visible_idx
  std::array<uint64_t, 4> rng_state{};  // generator state the plan was drawn from

  int num_visible() const { return (int)visible_idx.size(); }
  int num_masked() const { return (int)masked_idx.size(); }
};

// Uniformly random subset of round(ratio*n) masked patches out of n.
// Requires 0 <= ratio < 1; deterministic given the rng state (which is
// recorded in the plan before drawing).
MaskPlan random_mask(int n, double ratio, Rng& rng);

// The ratio-0 plan (every patch visible) without spending generator draws.
MaskPlan full_visibility_plan(int n);

// Per-patch standardized regression targets: each patch of the input image is
// shifted/scaled to mean 0, std 1 (population std, floored at 1e-6 so
// constant patches map to zero). Targets are constants — no gradients.
template <typename T>
struct PatchTarget {
  Tensor<T> normalized;  // (B, N, 3*P*P)
  Tensor<T> mean;        // (B, N, 1)
  Tensor<T> stddev;      // (B, N, 1), floored
};

template <typename T>
PatchTarget<T> mae_target(const Tensor<T>& images, int patch_size);

// Inverse of the target normalization: patches*std + mean. Used to turn
// normalized pixel predictions back into displayable pixels.
template <typename T>
Tensor<T> mae_denormalize(const Tensor<T>& patches, const PatchTarget<T>& target);

// Mean squared error between prediction and target over the masked patches
// only; predictions at visible positions never contribute. Requires at least
// one masked patch.
template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const PatchTarget<T>& target, const MaskPlan& plan);

// Encode the visible patches (plus class token), project to decoder width,
// and rebuild the full-length position-coded sequence with mask tokens at the
// masked slots: (B,H,W,3) -> (B, 1+N, decoder width). This is the shared
// front half of every masked decode, in pre-training and beyond.
template <typename T>
Tensor<T> masked_decoder_sequence(const VitEncoder<T>& encoder, const Linear<T>& enc_to_dec,
                                  const MaskTokenBank<T>& mask_bank, const Tensor<T>& images,
                                  const MaskPlan& plan);

// Masked autoencoder: asymmetric encoder/decoder pair. The encoder runs on
// the visible patch tokens plus the class token; the decoder runs on the
// full-length sequence where masked slots hold the learned mask token, with
// the fixed position table added at its input.
template <typename T>
struct MaeModel {
  ViTConfig enc_cfg, dec_cfg;
  VitEncoder<T> encoder;
  Linear<T> enc_to_dec;  // encoder width -> decoder width
  MaskTokenBank<T> mask_bank;
  VitDecoder<T> decoder;

  void init(const ViTConfig& enc, const ViTConfig& dec, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out);
  ParamList<T> parameters();  // named "mae.*"

  // (B,H,W,3) + plan -> normalized pixel predictions (B, N, 3*P*P).
  // Model weights aside, the output is a function of the visible patches
  // only; masked pixels influence training solely through the target.
  Tensor<T> forward_pretrain(const Tensor<T>& images, const MaskPlan& plan) const;
};

// Draw a fresh plan, build targets, run the masked forward pass, and apply
// one optimizer update. Returns the step's loss. Consumes images only —
// pre-training never sees labels.
template <typename T>
T mae_pretrain_step(MaeModel<T>& model, const Tensor<T>& images, Adam<T>& opt, double ratio,
                    Rng& rng);

// Visualization triple for one image (S*S*3 pixel buffers):
//  masked_view     input with masked patches grayed out,
//  reconstruction  de-normalized predictions for every patch,
//  composite       original pixels at visible patches, predictions at masked.
// With ratio=0 the composite equals the input exactly. If `out_stem` is
// non-empty the three images are written as <out_stem>_{masked,recon,composite}.ppm.
template <typename T>
struct ReconstructDemo {
  MaskPlan plan;
  std::vector<float> masked_view, reconstruction, composite;
};

template <typename T>
ReconstructDemo<T> reconstruct_demo(const MaeModel<T>& model, const Tensor<T>& image,
                                    double ratio, Rng& rng, const std::string& out_stem = "");

}  // namespace pfv
